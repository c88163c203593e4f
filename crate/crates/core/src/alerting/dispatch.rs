use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::Duration;

use chrono::Utc;
use tracing::{info, warn};

use super::{
    build_channel, Alert, AlertError, Channel, ChannelConfig, ChannelDelivery, DeliveryOutcome,
    DeliveryReport,
};

/// Records which (alert, channel) pairs were delivered so re-dispatch is a no-op.
pub trait DeliveryLedger: Send + Sync {
    /// Reserves the pair for sending. False when it is already delivered or
    /// another dispatch currently holds it.
    fn try_claim(&self, alert_id: &str, channel: &str) -> bool;
    /// Releases a claim, marking the pair delivered on success.
    fn release(&self, alert_id: &str, channel: &str, delivered: bool, provider_id: Option<&str>);
    fn is_delivered(&self, alert_id: &str, channel: &str) -> bool;
}

/// In-process ledger for tests and embedding.
#[derive(Debug, Default)]
pub struct MemoryLedger {
    state: Mutex<(HashSet<(String, String)>, HashSet<(String, String)>)>,
}

impl DeliveryLedger for MemoryLedger {
    fn try_claim(&self, alert_id: &str, channel: &str) -> bool {
        let key = (alert_id.to_string(), channel.to_string());
        let mut guard = self.state.lock().expect("ledger poisoned");
        let (delivered, in_flight) = &mut *guard;
        if delivered.contains(&key) || in_flight.contains(&key) {
            return false;
        }
        in_flight.insert(key);
        true
    }

    fn release(&self, alert_id: &str, channel: &str, ok: bool, _provider_id: Option<&str>) {
        let key = (alert_id.to_string(), channel.to_string());
        let mut guard = self.state.lock().expect("ledger poisoned");
        let (delivered, in_flight) = &mut *guard;
        in_flight.remove(&key);
        if ok {
            delivered.insert(key);
        }
    }

    fn is_delivered(&self, alert_id: &str, channel: &str) -> bool {
        let guard = self.state.lock().expect("ledger poisoned");
        guard.0.contains(&(alert_id.to_string(), channel.to_string()))
    }
}

/// Per-channel retry schedule: `max_retries` retries after the first
/// attempt, waiting `base`, `2·base`, `4·base`, ...
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchRetry {
    pub max_retries: u32,
    pub base: Duration,
}

impl Default for DispatchRetry {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base: Duration::from_secs(1),
        }
    }
}

impl DispatchRetry {
    pub fn delay(&self, retry_index: u32) -> Duration {
        self.base * 2u32.saturating_pow(retry_index)
    }
}

fn deliver_one(
    alert: &Alert,
    config: &ChannelConfig,
    channel: Result<&dyn Channel, String>,
    ledger: &dyn DeliveryLedger,
    retry: DispatchRetry,
) -> ChannelDelivery {
    let started_at = Utc::now();
    let entry = |outcome, provider_message_id| ChannelDelivery {
        channel: config.name.clone(),
        kind: config.kind,
        outcome,
        started_at,
        finished_at: Utc::now(),
        provider_message_id,
    };
    if !ledger.try_claim(&alert.alert_id, &config.name) {
        return entry(DeliveryOutcome::SkippedDuplicate, None);
    }
    let channel = match channel {
        Ok(c) => c,
        Err(e) => {
            ledger.release(&alert.alert_id, &config.name, false, None);
            return entry(
                DeliveryOutcome::Failed {
                    attempts: 0,
                    error: e,
                },
                None,
            );
        }
    };
    let mut attempts = 0;
    loop {
        attempts += 1;
        match channel.send(alert) {
            Ok(provider_id) => {
                ledger.release(&alert.alert_id, &config.name, true, provider_id.as_deref());
                info!(alert = %alert.alert_id, channel = %config.name, attempts, "alert delivered");
                return entry(
                    DeliveryOutcome::Delivered {
                        retried: attempts - 1,
                    },
                    provider_id,
                );
            }
            Err(e) if e.transient && attempts <= retry.max_retries => {
                warn!(alert = %alert.alert_id, channel = %config.name, attempts, error = %e, "delivery attempt failed");
                std::thread::sleep(retry.delay(attempts - 1));
            }
            Err(e) => {
                ledger.release(&alert.alert_id, &config.name, false, None);
                warn!(alert = %alert.alert_id, channel = %config.name, attempts, error = %e, "delivery failed");
                return entry(
                    DeliveryOutcome::Failed {
                        attempts,
                        error: e.message,
                    },
                    None,
                );
            }
        }
    }
}

/// Sends `alert` over every enabled channel, in parallel across channels.
/// Pairs already delivered are reported as skipped without contacting the
/// provider.
pub fn dispatch(
    alert: &Alert,
    channels: &[ChannelConfig],
    ledger: &dyn DeliveryLedger,
    retry: DispatchRetry,
) -> Result<DeliveryReport, AlertError> {
    let built: HashMap<String, Result<Box<dyn Channel>, String>> = channels
        .iter()
        .filter(|c| c.enabled)
        .map(|c| (c.name.clone(), build_channel(c)))
        .collect();
    dispatch_with(alert, channels, ledger, retry, |config| {
        built
            .get(&config.name)
            .expect("built above")
            .as_ref()
            .map(|b| b.as_ref())
            .map_err(|e| e.clone())
    })
}

/// [`dispatch`] with caller-supplied channel implementations.
pub fn dispatch_with<'a, F>(
    alert: &Alert,
    channels: &[ChannelConfig],
    ledger: &dyn DeliveryLedger,
    retry: DispatchRetry,
    resolve: F,
) -> Result<DeliveryReport, AlertError>
where
    F: Fn(&ChannelConfig) -> Result<&'a dyn Channel, String> + Sync,
{
    let enabled: Vec<&ChannelConfig> = channels.iter().filter(|c| c.enabled).collect();
    if enabled.is_empty() {
        return Err(AlertError::NoChannels);
    }
    let entries: Vec<ChannelDelivery> = std::thread::scope(|scope| {
        let handles: Vec<_> = enabled
            .iter()
            .map(|config| {
                let resolve = &resolve;
                scope.spawn(move || deliver_one(alert, config, resolve(config), ledger, retry))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("delivery thread panicked"))
            .collect()
    });
    let report = DeliveryReport {
        alert_id: alert.alert_id.clone(),
        entries,
    };
    if report.all_failed() {
        return Err(AlertError::AllChannelsFailed { report });
    }
    Ok(report)
}
