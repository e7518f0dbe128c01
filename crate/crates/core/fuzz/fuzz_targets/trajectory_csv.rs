#![no_main]

use libfuzzer_sys::fuzz_target;
use rflab::formats::parse_trajectory_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(table) = parse_trajectory_csv(text) else {
        return;
    };
    for row in &table.rows {
        assert_eq!(row.len(), table.columns.len());
    }
    let _ = table.column("t");
    let _ = table.state_width();
});
