//! Blocking JSON-over-HTTP helper shared by the remote clients.

use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    pub url: String,
    pub token: Option<String>,
    agent: ureq::Agent,
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonEndpoint {
            url: url.into(),
            token,
            agent,
        }
    }

    pub fn post(&self, body: &Value) -> Result<Value, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| format!("invalid JSON response: {e}"))
    }
}
