#![no_main]

use libfuzzer_sys::fuzz_target;
use phi4::fourier::{decode_snapshot, write_snapshot};

fuzz_target!(|data: &[u8]| {
    // anything that decodes must re-encode to a snapshot that decodes to the same field
    if let Ok(f) = decode_snapshot(data) {
        let mut buf = Vec::new();
        write_snapshot(&f, &mut buf).expect("encoding a decoded field");
        assert_eq!(decode_snapshot(&buf).expect("round trip"), f);
    }
});
