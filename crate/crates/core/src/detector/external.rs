use super::wire::{self, STATUS_CAPABILITY_MISMATCH, STATUS_OK};
use super::{check_capability, Capability, Detector, DetectorError, DetectorRequest, DetectorResponse};
use std::io::{Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

enum Incoming {
    Handshake([u8; 5]),
    Message(Vec<u8>),
    Closed(String),
}

/// A detector running as a child process, spoken to over stdin/stdout.
///
/// A background thread reads the child's stdout so that every call can be
/// bounded by a timeout. After a timeout or a transport failure the child is
/// killed and every later call fails with [`DetectorError::Transport`].
pub struct ExternalDetector {
    name: String,
    child: Child,
    stdin: Option<ChildStdin>,
    incoming: Receiver<Incoming>,
    capability: Capability,
    timeout: Duration,
    dead: Option<String>,
}

impl ExternalDetector {
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, DetectorError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DetectorError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take();
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name(format!("detector-reader-{}", child.id()))
            .spawn(move || {
                let mut hs = [0u8; 5];
                if let Err(e) = stdout.read_exact(&mut hs) {
                    let _ = tx.send(Incoming::Closed(format!("no handshake: {e}")));
                    return;
                }
                if tx.send(Incoming::Handshake(hs)).is_err() {
                    return;
                }
                loop {
                    let msg = match wire::read_message(&mut stdout) {
                        Ok(Some(body)) => Incoming::Message(body),
                        Ok(None) => Incoming::Closed("detector closed its output".into()),
                        Err(e) => Incoming::Closed(e.to_string()),
                    };
                    let closed = matches!(msg, Incoming::Closed(_));
                    if tx.send(msg).is_err() || closed {
                        return;
                    }
                }
            })
            .map_err(|e| DetectorError::Transport(e.to_string()))?;

        let mut det = Self {
            name: program.to_string(),
            child,
            stdin,
            incoming: rx,
            capability: Capability::Both,
            timeout,
            dead: None,
        };
        match det.incoming.recv_timeout(timeout) {
            Ok(Incoming::Handshake(hs)) => match wire::decode_handshake(&hs) {
                Ok(cap) => det.capability = cap,
                Err(e) => return Err(det.fail(e.to_string())),
            },
            Ok(Incoming::Closed(reason)) => return Err(det.fail(reason)),
            Ok(Incoming::Message(_)) => unreachable!("messages only follow the handshake"),
            Err(RecvTimeoutError::Timeout) => {
                det.kill("handshake timed out");
                return Err(DetectorError::Timeout(timeout));
            }
            Err(RecvTimeoutError::Disconnected) => return Err(det.fail("reader thread exited".into())),
        }
        Ok(det)
    }

    pub fn is_alive(&self) -> bool {
        self.dead.is_none()
    }

    fn kill(&mut self, reason: &str) {
        self.dead.get_or_insert_with(|| reason.to_string());
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn fail(&mut self, reason: String) -> DetectorError {
        self.kill(&reason);
        DetectorError::Transport(reason)
    }
}

impl Detector for ExternalDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn detect(&mut self, req: &DetectorRequest<'_>) -> Result<DetectorResponse, DetectorError> {
        if let Some(reason) = &self.dead {
            return Err(DetectorError::Transport(format!("detector is down: {reason}")));
        }
        check_capability(self.capability, req)?;
        let frame = wire::encode_request(req);
        let stdin = self.stdin.as_mut().expect("present while alive");
        if let Err(e) = stdin.write_all(&frame).and_then(|_| stdin.flush()) {
            return Err(self.fail(format!("write failed: {e}")));
        }
        match self.incoming.recv_timeout(self.timeout) {
            Ok(Incoming::Message(body)) => {
                let resp = match wire::decode_response_body(&body) {
                    Ok(r) => r,
                    Err(e) => return Err(self.fail(e.to_string())),
                };
                match resp.status {
                    STATUS_OK => Ok(DetectorResponse {
                        detections: resp.detections,
                        inference_micros: resp.inference_micros,
                    }),
                    STATUS_CAPABILITY_MISMATCH => Err(DetectorError::CapabilityMismatch {
                        capability: self.capability,
                        kind: req.kind(),
                    }),
                    s => Err(DetectorError::Transport(format!("detector answered status {s}"))),
                }
            }
            Ok(Incoming::Closed(reason)) => Err(self.fail(reason)),
            Ok(Incoming::Handshake(_)) => Err(self.fail("second handshake".into())),
            Err(RecvTimeoutError::Timeout) => {
                self.kill("request timed out");
                Err(DetectorError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.fail("reader thread exited".into())),
        }
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved child exit on EOF.
        self.stdin.take();
        if self.dead.is_none() {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                _ => std::thread::sleep(Duration::from_millis(20)),
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
