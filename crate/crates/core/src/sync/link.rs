use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::wire::{decode_frame, encode_frame, Decoded, FrameDecoder, Message, WireError};

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("link closed by peer")]
    Closed,
    #[error("no message within {0:?}")]
    Timeout(Duration),
    #[error("wire error: {0}")]
    Wire(#[from] WireError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Reliable FIFO duplex channel carrying protocol frames.
pub trait PeerLink {
    fn send(&mut self, msg: &Message) -> Result<(), LinkError>;
    /// Blocks until the next message arrives.
    fn recv(&mut self) -> Result<Message, LinkError>;
    /// Closes the sending half. Frames already sent stay readable by the peer.
    fn close(&mut self);
}

impl<L: PeerLink + ?Sized> PeerLink for &mut L {
    fn send(&mut self, msg: &Message) -> Result<(), LinkError> {
        (**self).send(msg)
    }
    fn recv(&mut self) -> Result<Message, LinkError> {
        (**self).recv()
    }
    fn close(&mut self) {
        (**self).close()
    }
}

impl<L: PeerLink + ?Sized> PeerLink for Box<L> {
    fn send(&mut self, msg: &Message) -> Result<(), LinkError> {
        (**self).send(msg)
    }
    fn recv(&mut self) -> Result<Message, LinkError> {
        (**self).recv()
    }
    fn close(&mut self) {
        (**self).close()
    }
}

/// In-process link. Frames are encoded on send and decoded on receive so
/// the codec is exercised exactly as over a socket.
pub struct InProcessLink {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    timeout: Option<Duration>,
}

impl InProcessLink {
    pub fn pair() -> (InProcessLink, InProcessLink) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            InProcessLink {
                tx: Some(a_tx),
                rx: a_rx,
                timeout: None,
            },
            InProcessLink {
                tx: Some(b_tx),
                rx: b_rx,
                timeout: None,
            },
        )
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

impl PeerLink for InProcessLink {
    fn send(&mut self, msg: &Message) -> Result<(), LinkError> {
        let frame = encode_frame(msg)?;
        let tx = self.tx.as_ref().ok_or(LinkError::Closed)?;
        tx.send(frame).map_err(|_| LinkError::Closed)
    }

    fn recv(&mut self) -> Result<Message, LinkError> {
        let frame = match self.timeout {
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => LinkError::Timeout(t),
                RecvTimeoutError::Disconnected => LinkError::Closed,
            })?,
            None => self.rx.recv().map_err(|_| LinkError::Closed)?,
        };
        match decode_frame(&frame)? {
            Decoded::Frame(msg, []) => Ok(msg),
            Decoded::Frame(..) => Err(WireError::malformed("frame", "trailing bytes").into()),
            Decoded::NeedMore(n) => {
                Err(WireError::malformed("frame", format!("truncated by {n} bytes")).into())
            }
        }
    }

    fn close(&mut self) {
        self.tx = None;
    }
}

/// Link over a TCP stream using the standard framing.
pub struct TcpLink {
    stream: TcpStream,
    decoder: FrameDecoder,
    closed: bool,
    read_timeout: Option<Duration>,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpLink {
            stream,
            decoder: FrameDecoder::new(),
            closed: false,
            read_timeout: None,
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) -> std::io::Result<()> {
        self.read_timeout = timeout;
        self.stream.set_read_timeout(timeout)
    }
}

impl PeerLink for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<(), LinkError> {
        if self.closed {
            return Err(LinkError::Closed);
        }
        let frame = encode_frame(msg)?;
        self.stream.write_all(&frame).map_err(|e| match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset => LinkError::Closed,
            _ => LinkError::Io(e),
        })
    }

    fn recv(&mut self) -> Result<Message, LinkError> {
        let mut chunk = [0u8; 64 * 1024];
        loop {
            if let Some(msg) = self.decoder.next_message()? {
                return Ok(msg);
            }
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(LinkError::Closed),
                Ok(n) => self.decoder.push(&chunk[..n]),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(LinkError::Timeout(self.read_timeout.unwrap_or_default()))
                }
                Err(e) if e.kind() == ErrorKind::ConnectionReset => return Err(LinkError::Closed),
                Err(e) => return Err(LinkError::Io(e)),
            }
        }
    }

    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            let _ = self.stream.flush();
            let _ = self.stream.shutdown(Shutdown::Write);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::net::TcpListener;

    use super::*;
    use crate::wire::{MsgType, NetworkUpdate, PhysicsUpdate};

    #[test]
    fn in_process_fifo_and_close() {
        let (mut a, mut b) = InProcessLink::pair();
        for t in 0..5 {
            a.send(&PhysicsUpdate::new(MsgType::Begin, t).into()).unwrap();
        }
        a.close();
        for t in 0..5 {
            assert_eq!(b.recv().unwrap().time_val(), t);
        }
        assert!(matches!(b.recv(), Err(LinkError::Closed)));
        assert!(matches!(
            a.send(&PhysicsUpdate::new(MsgType::Begin, 9).into()),
            Err(LinkError::Closed)
        ));
    }

    #[test]
    fn in_process_timeout() {
        let (_a, b) = InProcessLink::pair();
        let mut b = b.with_timeout(Duration::from_millis(5));
        assert!(matches!(b.recv(), Err(LinkError::Timeout(_))));
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut link = TcpLink::new(s).unwrap();
            let mut got = Vec::new();
            loop {
                match link.recv() {
                    Ok(m) => got.push(m),
                    Err(LinkError::Closed) => break,
                    Err(e) => panic!("{e}"),
                }
            }
            got
        });
        let mut client = TcpLink::connect(addr).unwrap();
        let sent: Vec<Message> = (0..100)
            .map(|t| NetworkUpdate::new(MsgType::End, t).into())
            .collect();
        for m in &sent {
            client.send(m).unwrap();
        }
        client.close();
        assert_eq!(server.join().unwrap(), sent);
    }
}
