//! Line transports connecting an agent to one adapter instance.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::synthetic::SyntheticAdapter;

#[derive(Debug, PartialEq, Eq)]
pub enum Recv {
    Line(String),
    /// The adapter closed its output (exited or crashed).
    Eof,
    TimedOut,
}

pub trait LineTransport: Send {
    fn send(&mut self, line: &str) -> io::Result<()>;
    fn recv(&mut self, timeout: Duration) -> io::Result<Recv>;
    /// Forcibly ends the adapter. Idempotent.
    fn terminate(&mut self);
}

fn recv_from(rx: &Receiver<io::Result<String>>, timeout: Duration) -> io::Result<Recv> {
    match rx.recv_timeout(timeout) {
        Ok(Ok(line)) => Ok(Recv::Line(line)),
        Ok(Err(e)) => Err(e),
        Err(RecvTimeoutError::Timeout) => Ok(Recv::TimedOut),
        Err(RecvTimeoutError::Disconnected) => Ok(Recv::Eof),
    }
}

/// An adapter running as a child process, spoken to over stdin/stdout.
pub struct SubprocessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    reader: Option<JoinHandle<()>>,
}

impl SubprocessTransport {
    pub fn spawn(argv: &[String]) -> io::Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty adapter command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");

        let (tx, lines) = mpsc::channel();
        let reader = thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        let name = program.clone();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                tracing::debug!(adapter = %name, "{line}");
            }
        });
        Ok(Self { child, stdin, lines, reader: Some(reader) })
    }
}

impl LineTransport for SubprocessTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "adapter stdin closed"))?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Recv> {
        recv_from(&self.lines, timeout)
    }

    fn terminate(&mut self) {
        self.stdin.take();
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        self.terminate();
    }
}

/// A synthetic adapter served on a thread inside the agent process.
pub struct InProcessTransport {
    requests: Option<Sender<String>>,
    lines: Receiver<io::Result<String>>,
    worker: Option<JoinHandle<()>>,
}

impl InProcessTransport {
    pub fn start(adapter: SyntheticAdapter) -> Self {
        let (req_tx, req_rx) = mpsc::channel::<String>();
        let (line_tx, lines) = mpsc::channel();
        let worker = thread::spawn(move || {
            let _ = adapter.serve_lines(
                || req_rx.recv().ok(),
                |line| {
                    line_tx
                        .send(Ok(line.to_string()))
                        .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "agent went away"))
                },
            );
        });
        Self { requests: Some(req_tx), lines, worker: Some(worker) }
    }
}

impl LineTransport for InProcessTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        self.requests
            .as_ref()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "adapter terminated"))?
            .send(line.to_string())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "adapter exited"))
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Recv> {
        recv_from(&self.lines, timeout)
    }

    fn terminate(&mut self) {
        self.requests.take();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for InProcessTransport {
    fn drop(&mut self) {
        self.terminate();
    }
}
