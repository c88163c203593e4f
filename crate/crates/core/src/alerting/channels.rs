use std::fs::OpenOptions;
use std::io::Write;
use std::time::Duration;

use base64::Engine;

use super::{Alert, ChannelConfig, ChannelKind};

const DEFAULT_TWILIO_BASE: &str = "https://api.twilio.com";
const SMS_BODY_LIMIT: usize = 1600;

#[derive(Debug, Clone, PartialEq)]
pub struct SendError {
    /// Worth retrying (network trouble, HTTP 429 or 5xx).
    pub transient: bool,
    pub message: String,
}

impl SendError {
    fn transient(message: impl Into<String>) -> Self {
        Self {
            transient: true,
            message: message.into(),
        }
    }

    fn fatal(message: impl Into<String>) -> Self {
        Self {
            transient: false,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for SendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// A configured delivery route. `send` returns the provider message id when
/// the provider reports one.
pub trait Channel: Send + Sync {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError>;
}

fn is_e164(number: &str) -> bool {
    let digits = match number.strip_prefix('+') {
        Some(d) => d,
        None => return false,
    };
    (7..=15).contains(&digits.len())
        && digits.chars().all(|c| c.is_ascii_digit())
        && !digits.starts_with('0')
}

fn is_http_url(url: &str) -> bool {
    (url.starts_with("http://") || url.starts_with("https://")) && url.len() > "https://".len()
}

fn is_email(addr: &str) -> bool {
    match addr.split_once('@') {
        Some((user, domain)) => !user.is_empty() && domain.contains('.') && !domain.ends_with('.'),
        None => false,
    }
}

/// Checks the destination (and sender) format for the channel kind.
pub fn validate_destination(config: &ChannelConfig) -> Result<(), String> {
    let dest = config.destination.trim();
    match config.kind {
        ChannelKind::Sms | ChannelKind::Whatsapp => {
            let number = dest.strip_prefix("whatsapp:").unwrap_or(dest);
            if !is_e164(number) {
                return Err(format!("`{dest}` is not an E.164 phone number"));
            }
            let from = config.from.as_deref().unwrap_or("");
            if !is_e164(from.strip_prefix("whatsapp:").unwrap_or(from)) {
                return Err("`from` must be an E.164 phone number".into());
            }
            for role in ["account_sid", "auth_token"] {
                if !config.credentials_env.contains_key(role) {
                    return Err(format!("credentials_env.{role} is required"));
                }
            }
            if let Some(base) = &config.base_url {
                if !is_http_url(base) {
                    return Err(format!("base_url `{base}` is not an http(s) URL"));
                }
            }
        }
        ChannelKind::Email => {
            if !is_email(dest) {
                return Err(format!("`{dest}` is not an email address"));
            }
            if !config.from.as_deref().map(is_email).unwrap_or(false) {
                return Err("`from` must be an email address".into());
            }
            if config.base_url.as_deref().unwrap_or("").is_empty() {
                return Err("base_url must name the SMTP relay host".into());
            }
        }
        ChannelKind::Webhook => {
            if !is_http_url(dest) {
                return Err(format!("`{dest}` is not an http(s) URL"));
            }
        }
        ChannelKind::File => {
            if dest.is_empty() {
                return Err("file channel needs a destination path".into());
            }
        }
        ChannelKind::Stdout => {}
    }
    Ok(())
}

fn env_credential(config: &ChannelConfig, role: &str) -> Result<String, SendError> {
    let var = config
        .credentials_env
        .get(role)
        .ok_or_else(|| SendError::fatal(format!("credentials_env.{role} not configured")))?;
    std::env::var(var).map_err(|_| SendError::fatal(format!("environment variable {var} is not set")))
}

fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(15)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn classify_status(status: u16, body: &str) -> Result<(), SendError> {
    match status {
        200..=299 => Ok(()),
        429 | 500..=599 => Err(SendError::transient(format!("HTTP {status}"))),
        _ => Err(SendError::fatal(format!("HTTP {status}: {body}"))),
    }
}

/// Twilio-compatible Messages API: form-encoded To/From/Body/MediaUrl with
/// basic auth (account SID and auth token).
struct TwilioChannel {
    config: ChannelConfig,
    agent: ureq::Agent,
}

impl TwilioChannel {
    fn address(&self, number: &str) -> String {
        match self.config.kind {
            ChannelKind::Whatsapp if !number.starts_with("whatsapp:") => {
                format!("whatsapp:{number}")
            }
            _ => number.to_string(),
        }
    }
}

impl Channel for TwilioChannel {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError> {
        let sid = env_credential(&self.config, "account_sid")?;
        let token = env_credential(&self.config, "auth_token")?;
        let base = self
            .config
            .base_url
            .as_deref()
            .unwrap_or(DEFAULT_TWILIO_BASE)
            .trim_end_matches('/');
        let url = format!("{base}/2010-04-01/Accounts/{sid}/Messages.json");
        let auth = base64::engine::general_purpose::STANDARD.encode(format!("{sid}:{token}"));

        let body: String = alert.message_body().chars().take(SMS_BODY_LIMIT).collect();
        let mut form: Vec<(String, String)> = vec![
            ("To".into(), self.address(self.config.destination.trim())),
            ("From".into(), self.address(self.config.from.as_deref().unwrap_or(""))),
            ("Body".into(), body),
        ];
        // providers fetch media themselves, so only absolute URLs are useful
        form.extend(
            alert
                .evidence_urls
                .iter()
                .filter(|u| is_http_url(u))
                .map(|u| ("MediaUrl".to_string(), u.clone())),
        );

        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Basic {auth}"))
            .send_form(form.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| SendError::transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().unwrap_or_default();
        classify_status(status, &text)?;
        let sid = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["sid"].as_str().map(str::to_string));
        Ok(sid)
    }
}

/// POSTs the alert JSON.
struct WebhookChannel {
    config: ChannelConfig,
    agent: ureq::Agent,
}

impl Channel for WebhookChannel {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError> {
        let mut req = self
            .agent
            .post(self.config.destination.trim())
            .header("Content-Type", "application/json");
        if self.config.credentials_env.contains_key("bearer_token") {
            let token = env_credential(&self.config, "bearer_token")?;
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = req
            .send(alert.to_json())
            .map_err(|e| SendError::transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().unwrap_or_default();
        classify_status(status, &text)?;
        Ok(None)
    }
}

/// Appends the alert JSON as one line.
struct FileChannel {
    path: std::path::PathBuf,
}

impl Channel for FileChannel {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| SendError::transient(e.to_string()))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| SendError::transient(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{}", alert.to_json()).map_err(|e| SendError::transient(e.to_string()))?;
        Ok(None)
    }
}

struct StdoutChannel;

impl Channel for StdoutChannel {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError> {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        writeln!(lock, "{}", alert.to_json()).map_err(|e| SendError::transient(e.to_string()))?;
        Ok(None)
    }
}

#[cfg(feature = "smtp")]
struct EmailChannel {
    config: ChannelConfig,
}

#[cfg(feature = "smtp")]
impl Channel for EmailChannel {
    fn send(&self, alert: &Alert) -> Result<Option<String>, SendError> {
        use lettre::transport::smtp::authentication::Credentials;
        use lettre::{Message, SmtpTransport, Transport};

        let from = self.config.from.as_deref().unwrap_or_default();
        let message = Message::builder()
            .from(from.parse().map_err(|e| SendError::fatal(format!("from: {e}")))?)
            .to(self
                .config
                .destination
                .trim()
                .parse()
                .map_err(|e| SendError::fatal(format!("destination: {e}")))?)
            .subject(format!("Child safety alert {}", alert.alert_id))
            .body(format!(
                "{}\n\nEvidence:\n{}\n",
                alert.message_body(),
                alert.evidence_urls.join("\n")
            ))
            .map_err(|e| SendError::fatal(e.to_string()))?;
        let host = self.config.base_url.as_deref().unwrap_or_default();
        let mut builder =
            SmtpTransport::relay(host).map_err(|e| SendError::fatal(e.to_string()))?;
        if self.config.credentials_env.contains_key("username") {
            builder = builder.credentials(Credentials::new(
                env_credential(&self.config, "username")?,
                env_credential(&self.config, "password")?,
            ));
        }
        let response = builder
            .build()
            .send(&message)
            .map_err(|e| SendError::transient(e.to_string()))?;
        let id = response.message().next().map(str::to_string);
        Ok(id)
    }
}

/// Instantiates the channel described by `config`.
pub fn build_channel(config: &ChannelConfig) -> Result<Box<dyn Channel>, String> {
    validate_destination(config)?;
    Ok(match config.kind {
        ChannelKind::Sms | ChannelKind::Whatsapp => Box::new(TwilioChannel {
            config: config.clone(),
            agent: http_agent(),
        }),
        ChannelKind::Webhook => Box::new(WebhookChannel {
            config: config.clone(),
            agent: http_agent(),
        }),
        ChannelKind::File => Box::new(FileChannel {
            path: config.destination.trim().into(),
        }),
        ChannelKind::Stdout => Box::new(StdoutChannel),
        #[cfg(feature = "smtp")]
        ChannelKind::Email => Box::new(EmailChannel {
            config: config.clone(),
        }),
        #[cfg(not(feature = "smtp"))]
        ChannelKind::Email => {
            return Err("email channels need a build with the `smtp` feature".into())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twilio(kind: ChannelKind, dest: &str) -> ChannelConfig {
        let mut c = ChannelConfig::new("sms", kind, dest);
        c.from = Some("+15550001111".into());
        c.credentials_env.insert("account_sid".into(), "SID_VAR".into());
        c.credentials_env.insert("auth_token".into(), "TOKEN_VAR".into());
        c
    }

    #[test]
    fn destination_formats() {
        assert!(validate_destination(&twilio(ChannelKind::Sms, "+14155550123")).is_ok());
        assert!(validate_destination(&twilio(ChannelKind::Sms, "4155550123")).is_err());
        assert!(validate_destination(&twilio(ChannelKind::Whatsapp, "whatsapp:+14155550123")).is_ok());
        let mut no_creds = twilio(ChannelKind::Sms, "+14155550123");
        no_creds.credentials_env.clear();
        assert!(validate_destination(&no_creds).is_err());

        assert!(validate_destination(&ChannelConfig::new("w", ChannelKind::Webhook, "https://x.io/hook")).is_ok());
        assert!(validate_destination(&ChannelConfig::new("w", ChannelKind::Webhook, "ftp://x")).is_err());
        assert!(validate_destination(&ChannelConfig::new("f", ChannelKind::File, "")).is_err());
        assert!(validate_destination(&ChannelConfig::new("o", ChannelKind::Stdout, "")).is_ok());

        let mut email = ChannelConfig::new("e", ChannelKind::Email, "guard@school.example");
        email.from = Some("pi@site.example".into());
        email.base_url = Some("smtp.site.example".into());
        assert!(validate_destination(&email).is_ok());
        email.destination = "nobody".into();
        assert!(validate_destination(&email).is_err());
    }

    #[test]
    fn whatsapp_addresses_are_prefixed() {
        let ch = TwilioChannel {
            config: twilio(ChannelKind::Whatsapp, "+14155550123"),
            agent: http_agent(),
        };
        assert_eq!(ch.address("+14155550123"), "whatsapp:+14155550123");
        assert_eq!(ch.address("whatsapp:+1415"), "whatsapp:+1415");
    }

    #[test]
    fn status_classes() {
        assert!(classify_status(201, "").is_ok());
        assert!(classify_status(503, "").unwrap_err().transient);
        assert!(classify_status(429, "").unwrap_err().transient);
        assert!(!classify_status(401, "bad auth").unwrap_err().transient);
    }
}
