pub mod oracles;

use std::io::BufReader;

use dbroute::protocol::{serve_stub, Channel, StubMode};

#[allow(dead_code)]
/// Client channel to the built-in stub running on a thread over pipes.
pub fn stub_channel(mode: StubMode, vocab_hash: Option<String>) -> Channel {
    let (client_read, stub_write) = std::io::pipe().unwrap();
    let (stub_read, client_write) = std::io::pipe().unwrap();
    std::thread::spawn(move || serve_stub(BufReader::new(stub_read), stub_write, mode, vocab_hash.as_deref()));
    Channel::new(BufReader::new(client_read), client_write)
}
