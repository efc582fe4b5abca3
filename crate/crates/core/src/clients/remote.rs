//! Command and HTTP backends. Both send the request JSON and parse one JSON
//! object as the response.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;

/// Where a client lives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Endpoint {
    #[default]
    Mock,
    /// Spawned once per request; request on stdin, response on stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// JSON POST.
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

impl Endpoint {
    pub fn is_mock(&self) -> bool {
        matches!(self, Endpoint::Mock)
    }
}

#[derive(Clone)]
enum Transport {
    Command { program: String, args: Vec<String> },
    Http { url: String, agent: ureq::Agent },
}

/// A client speaking the JSON wire contract over a command or HTTP endpoint.
#[derive(Clone)]
pub struct RemoteClient {
    transport: Transport,
}

impl RemoteClient {
    /// `None` for [`Endpoint::Mock`].
    pub fn new(endpoint: &Endpoint) -> Option<Self> {
        let transport = match endpoint {
            Endpoint::Mock => return None,
            Endpoint::Command { program, args } => Transport::Command {
                program: program.clone(),
                args: args.clone(),
            },
            Endpoint::Http { url, timeout_secs } => {
                let config = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(*timeout_secs)))
                    .build();
                Transport::Http {
                    url: url.clone(),
                    agent: config.into(),
                }
            }
        };
        Some(Self { transport })
    }

    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, request: &Req) -> Result<Resp, ClientError> {
        let body = serde_json::to_vec(request).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let bytes = match &self.transport {
            Transport::Command { program, args } => run_command(program, args, &body)?,
            Transport::Http { url, agent } => {
                let mut response = agent
                    .post(url)
                    .header("content-type", "application/json")
                    .send(&body[..])
                    .map_err(|e| match e {
                        ureq::Error::StatusCode(code) => ClientError::Failed(format!("{url} returned HTTP {code}")),
                        other => ClientError::Transport(format!("{url}: {other}")),
                    })?;
                response
                    .body_mut()
                    .read_to_vec()
                    .map_err(|e| ClientError::Transport(format!("{url}: {e}")))?
            }
        };
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

fn run_command(program: &str, args: &[String], input: &[u8]) -> Result<Vec<u8>, ClientError> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| ClientError::Transport(format!("spawning {program}: {e}")))?;
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // a client that exits without reading its input is not an error here
        let _ = stdin.write_all(input);
    }
    let output = child
        .wait_with_output()
        .map_err(|e| ClientError::Transport(format!("waiting for {program}: {e}")))?;
    if !output.status.success() {
        return Err(ClientError::Failed(format!(
            "{program} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(output.stdout)
}

impl Generator for RemoteClient {
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, ClientError> {
        self.call(request)
    }
}

impl KeypointDetector for RemoteClient {
    fn detect(&self, request: &ImageRequest) -> Result<KeypointResponse, ClientError> {
        self.call(request)
    }
}

impl PersonDetector for RemoteClient {
    fn count(&self, request: &ImageRequest) -> Result<PersonCountResponse, ClientError> {
        self.call(request)
    }
}

impl HeadPoseEstimator for RemoteClient {
    fn head_pose(&self, request: &ImageRequest) -> Result<EulerAngles, ClientError> {
        let angles: EulerAngles = self.call(request)?;
        if ![angles.roll, angles.pitch, angles.yaw].iter().all(|a| a.is_finite()) {
            return Err(ClientError::Protocol("non-finite head pose".into()));
        }
        Ok(angles)
    }
}

impl Captioner for RemoteClient {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, ClientError> {
        self.call(request)
    }
}
