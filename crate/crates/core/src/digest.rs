use std::fmt::Write;

use sha2::{Digest, Sha256};

pub fn sha256_hex(data: &[u8]) -> String {
    let out = Sha256::digest(data);
    let mut s = String::with_capacity(64);
    for b in out.iter() {
        write!(s, "{b:02x}").expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    #[test]
    fn known_vector() {
        assert_eq!(
            super::sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
