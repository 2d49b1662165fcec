//! Newline-delimited JSON protocol to external simulators and policies.
//!
//! Every message is one UTF-8 JSON object per line with a `type` field:
//! `hello {version}`, `reset {task_id, scene_patch, instruction}`,
//! `obs {views: {name: base64 PNG}, state}`, `action {values: [7 floats]}`,
//! `done {success, steps}`. Both peers open with `hello`.

use super::{Action, Environment, EpisodeTask, HarnessError, Observation, Policy, Step};
use crate::image::Image;
use crate::patch::ScenePatch;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
    },
    Reset {
        task_id: String,
        scene_patch: ScenePatch,
        instruction: String,
    },
    Obs {
        views: BTreeMap<String, String>,
        state: Vec<f64>,
    },
    Action {
        values: Vec<f64>,
    },
    Done {
        success: bool,
        steps: u32,
    },
}

impl Message {
    fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Reset { .. } => "reset",
            Message::Obs { .. } => "obs",
            Message::Action { .. } => "action",
            Message::Done { .. } => "done",
        }
    }

    pub fn observation(obs: &Observation) -> Result<Self, HarnessError> {
        let mut views = BTreeMap::new();
        for (name, img) in &obs.views {
            let png = img.to_png().map_err(|e| HarnessError::Protocol(e.to_string()))?;
            views.insert(name.clone(), B64.encode(png));
        }
        Ok(Message::Obs {
            views,
            state: obs.state.clone(),
        })
    }

    pub fn decode_observation(views: &BTreeMap<String, String>, state: Vec<f64>) -> Result<Observation, HarnessError> {
        let mut out = BTreeMap::new();
        for (name, data) in views {
            let bytes = B64
                .decode(data)
                .map_err(|e| HarnessError::Protocol(format!("view `{name}`: {e}")))?;
            let img = Image::from_png(&bytes).map_err(|e| HarnessError::Protocol(format!("view `{name}`: {e}")))?;
            out.insert(name.clone(), img);
        }
        Ok(Observation { views: out, state })
    }
}

fn unexpected(m: &Message, wanted: &str) -> HarnessError {
    HarnessError::Protocol(format!("expected {wanted}, received {}", m.name()))
}

/// One framed connection with a receive timeout.
///
/// A reader thread owns the inbound half so a silent peer can never block
/// the caller past `timeout`.
pub struct WireConnection {
    writer: Box<dyn Write + Send>,
    incoming: mpsc::Receiver<std::io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
    tcp: Option<TcpStream>,
}

impl WireConnection {
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Box::new(writer),
            incoming: rx,
            timeout,
            child: None,
            tcp: None,
        }
    }

    pub fn tcp(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, HarnessError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut conn = Self::from_streams(stream.try_clone()?, stream.try_clone()?, timeout);
        conn.tcp = Some(stream);
        Ok(conn)
    }

    /// Runs `command` with piped stdin/stdout; the child is killed on drop.
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self, HarnessError> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let mut conn = Self::from_streams(stdout, stdin, timeout);
        conn.child = Some(child);
        Ok(conn)
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), HarnessError> {
        let mut line = serde_json::to_vec(msg).map_err(|e| HarnessError::Protocol(e.to_string()))?;
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, HarnessError> {
        loop {
            let line = match self.incoming.recv_timeout(self.timeout) {
                Ok(line) => line?,
                Err(mpsc::RecvTimeoutError::Timeout) => return Err(HarnessError::Timeout(self.timeout)),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(HarnessError::Closed),
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line)
                .map_err(|e| HarnessError::Protocol(format!("bad message `{}`: {e}", line.trim())));
        }
    }

    pub fn handshake(&mut self) -> Result<(), HarnessError> {
        self.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match self.recv()? {
            Message::Hello {
                version: PROTOCOL_VERSION,
            } => Ok(()),
            Message::Hello { version } => Err(HarnessError::Protocol(format!(
                "peer speaks version {version}, expected {PROTOCOL_VERSION}"
            ))),
            other => Err(unexpected(&other, "hello")),
        }
    }
}

impl Drop for WireConnection {
    fn drop(&mut self) {
        if let Some(s) = &self.tcp {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(c) = &mut self.child {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn reset_message(task: &EpisodeTask) -> Message {
    Message::Reset {
        task_id: task.task_id.clone(),
        scene_patch: task.scene_patch.clone(),
        instruction: task.instruction.clone(),
    }
}

/// Simulator on the far side: the harness sends `reset` and `action`,
/// the peer answers with `obs` or `done`.
pub struct WireEnvironment {
    conn: WireConnection,
    greeted: bool,
    steps: u32,
}

impl WireEnvironment {
    pub fn new(conn: WireConnection) -> Self {
        Self {
            conn,
            greeted: false,
            steps: 0,
        }
    }
}

impl Environment for WireEnvironment {
    fn reset(&mut self, task: &EpisodeTask, _seed: u64) -> Result<Observation, HarnessError> {
        if !self.greeted {
            self.conn.handshake()?;
            self.greeted = true;
        }
        self.steps = 0;
        self.conn.send(&reset_message(task))?;
        match self.conn.recv()? {
            Message::Obs { views, state } => Message::decode_observation(&views, state),
            other => Err(unexpected(&other, "obs")),
        }
    }

    fn step(&mut self, action: &Action) -> Result<Step, HarnessError> {
        self.conn.send(&Message::Action {
            values: action.values().to_vec(),
        })?;
        self.steps += 1;
        match self.conn.recv()? {
            Message::Obs { views, state } => Ok(Step::Observation(Message::decode_observation(&views, state)?)),
            Message::Done { success, steps } => {
                if steps != self.steps {
                    return Err(HarnessError::Protocol(format!(
                        "peer counted {steps} steps, harness sent {}",
                        self.steps
                    )));
                }
                Ok(Step::Done { success })
            }
            other => Err(unexpected(&other, "obs or done")),
        }
    }
}

/// Policy on the far side: the harness sends `reset`, `obs` and `done`,
/// the peer answers each `obs` with an `action`.
pub struct WirePolicy {
    conn: WireConnection,
    greeted: bool,
}

impl WirePolicy {
    pub fn new(conn: WireConnection) -> Self {
        Self { conn, greeted: false }
    }
}

impl Policy for WirePolicy {
    fn reset(&mut self, task: &EpisodeTask) -> Result<(), HarnessError> {
        if !self.greeted {
            self.conn.handshake()?;
            self.greeted = true;
        }
        self.conn.send(&reset_message(task))
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, HarnessError> {
        self.conn.send(&Message::observation(obs)?)?;
        match self.conn.recv()? {
            Message::Action { values } => Action::try_from(values),
            other => Err(unexpected(&other, "action")),
        }
    }

    fn finish(&mut self, success: bool, steps: u32) -> Result<(), HarnessError> {
        self.conn.send(&Message::Done { success, steps })
    }
}
