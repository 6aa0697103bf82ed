/// Best known max-cut values for the Gset graphs G1 to G54, used only to
/// report gap percentages.
const BEST_KNOWN: [(&str, f64); 54] = [
    ("G1", 11624.0), ("G2", 11620.0), ("G3", 11622.0), ("G4", 11646.0), ("G5", 11631.0),
    ("G6", 2178.0), ("G7", 2006.0), ("G8", 2005.0), ("G9", 2054.0), ("G10", 2000.0),
    ("G11", 564.0), ("G12", 556.0), ("G13", 582.0), ("G14", 3064.0), ("G15", 3050.0),
    ("G16", 3052.0), ("G17", 3047.0), ("G18", 992.0), ("G19", 906.0), ("G20", 941.0),
    ("G21", 931.0), ("G22", 13359.0), ("G23", 13344.0), ("G24", 13337.0), ("G25", 13340.0),
    ("G26", 13328.0), ("G27", 3341.0), ("G28", 3298.0), ("G29", 3405.0), ("G30", 3413.0),
    ("G31", 3310.0), ("G32", 1410.0), ("G33", 1382.0), ("G34", 1384.0), ("G35", 7687.0),
    ("G36", 7680.0), ("G37", 7691.0), ("G38", 7688.0), ("G39", 2408.0), ("G40", 2400.0),
    ("G41", 2405.0), ("G42", 2481.0), ("G43", 6660.0), ("G44", 6650.0), ("G45", 6654.0),
    ("G46", 6649.0), ("G47", 6657.0), ("G48", 6000.0), ("G49", 6000.0), ("G50", 5880.0),
    ("G51", 3848.0), ("G52", 3851.0), ("G53", 3850.0), ("G54", 3852.0),
];

/// Looks up an instance by name, ignoring case, leading zeros and a file
/// extension (`g01.rudy` matches `G1`).
pub fn best_known_cut(name: &str) -> Option<f64> {
    let stem = name.rsplit('/').next().unwrap_or(name);
    let stem = stem.split('.').next().unwrap_or(stem);
    let digits = stem.strip_prefix(['G', 'g'])?;
    let k: usize = digits.parse().ok()?;
    BEST_KNOWN.iter().find(|(key, _)| key[1..].parse::<usize>().ok() == Some(k)).map(|e| e.1)
}
