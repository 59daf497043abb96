#![no_main]

use libfuzzer_sys::fuzz_target;
use phi4::harness::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text) {
            // emitting is stable under a parse round trip
            let text = m.emit();
            assert_eq!(Manifest::parse(&text).expect("round trip").emit(), text);
        }
    }
});
