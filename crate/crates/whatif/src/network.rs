//! Two-tier network description and the analytical collective cost model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use traceval_core::card::WorkloadCard;
use traceval_core::trace::CollectiveKind;

use crate::WhatIfError;

/// Bandwidths are unidirectional GB/s (10⁹ bytes per second), latencies seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub scale_up_bandwidth: f64,
    pub scale_out_bandwidth: f64,
    pub scale_up_domain_size: usize,
    #[serde(default)]
    pub scale_up_latency: f64,
    #[serde(default)]
    pub scale_out_latency: f64,
    #[serde(default)]
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    ScaleUp,
    ScaleOut,
}

/// The hardware knob doubled by a what-if run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    ScaleOutBandwidth,
    ScaleUpBandwidth,
    ScaleUpDomainSize,
}

impl Resource {
    pub const ALL: [Resource; 3] = [
        Resource::ScaleOutBandwidth,
        Resource::ScaleUpBandwidth,
        Resource::ScaleUpDomainSize,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Resource::ScaleOutBandwidth => "scale-out-bw",
            Resource::ScaleUpBandwidth => "scale-up-bw",
            Resource::ScaleUpDomainSize => "scale-up-domain",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Resource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "scale-out-bw" | "scale-out-bandwidth" | "scaleoutbandwidth" => Ok(Resource::ScaleOutBandwidth),
            "scale-up-bw" | "scale-up-bandwidth" | "scaleupbandwidth" => Ok(Resource::ScaleUpBandwidth),
            "scale-up-domain" | "scale-up-domain-size" | "scaleupdomainsize" => Ok(Resource::ScaleUpDomainSize),
            other => Err(format!(
                "unknown resource `{other}` (expected scale-out-bw, scale-up-bw or scale-up-domain)"
            )),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), WhatIfError> {
        let bad = |m: &str| Err(WhatIfError::InvalidNetwork(m.to_string()));
        if !(self.scale_up_bandwidth.is_finite() && self.scale_up_bandwidth > 0.0) {
            return bad("scale_up_bandwidth must be > 0");
        }
        if !(self.scale_out_bandwidth.is_finite() && self.scale_out_bandwidth > 0.0) {
            return bad("scale_out_bandwidth must be > 0");
        }
        if self.scale_up_domain_size == 0 {
            return bad("scale_up_domain_size must be >= 1");
        }
        if !(self.scale_up_latency >= 0.0 && self.scale_out_latency >= 0.0) {
            return bad("latencies must be >= 0");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WhatIfError> {
        let net: NetworkConfig =
            serde_json::from_str(text).map_err(|e| WhatIfError::InvalidNetwork(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    /// Derives a network from the card's hardware section.
    ///
    /// `network_topo.bandwidth_gbps` lists link speeds in Gbit/s; the smallest is
    /// taken as scale-out and the largest as scale-up. The scale-up domain is
    /// `xpu_spec.count_per_node`. Latencies default to zero.
    pub fn from_card(card: &WorkloadCard) -> Result<Self, WhatIfError> {
        let hw = &card.workload.hardware;
        let links = hw
            .network_topo
            .as_ref()
            .and_then(|t| t.bandwidth_gbps.clone())
            .unwrap_or_default();
        let (lo, hi) = links
            .iter()
            .fold(None, |acc: Option<(f64, f64)>, &b| match acc {
                None => Some((b, b)),
                Some((lo, hi)) => Some((lo.min(b), hi.max(b))),
            })
            .ok_or_else(|| WhatIfError::InvalidNetwork("card lists no workload.hardware.network_topo.bandwidth_gbps".into()))?;
        let domain = hw
            .xpu_spec
            .count_per_node
            .ok_or_else(|| WhatIfError::InvalidNetwork("card lacks workload.hardware.xpu_spec.count_per_node".into()))?;
        let net = NetworkConfig {
            scale_up_bandwidth: hi / 8.0,
            scale_out_bandwidth: lo / 8.0,
            scale_up_domain_size: domain as usize,
            scale_up_latency: 0.0,
            scale_out_latency: 0.0,
            algorithm: Algorithm::Ring,
        };
        net.validate()?;
        Ok(net)
    }

    /// Copy with one resource doubled.
    pub fn doubled(&self, resource: Resource) -> NetworkConfig {
        let mut net = self.clone();
        match resource {
            Resource::ScaleOutBandwidth => net.scale_out_bandwidth *= 2.0,
            Resource::ScaleUpBandwidth => net.scale_up_bandwidth *= 2.0,
            Resource::ScaleUpDomainSize => net.scale_up_domain_size *= 2,
        }
        net
    }

    /// Scale-up iff the group fits in a domain and every member shares one.
    pub fn tier(&self, group_size: usize, members: &[usize]) -> Tier {
        let d = self.scale_up_domain_size;
        let same_domain = members.windows(2).all(|w| w[0] / d == w[1] / d);
        if group_size <= d && same_domain {
            Tier::ScaleUp
        } else {
            Tier::ScaleOut
        }
    }

    fn bandwidth(&self, tier: Tier) -> f64 {
        match tier {
            Tier::ScaleUp => self.scale_up_bandwidth,
            Tier::ScaleOut => self.scale_out_bandwidth,
        }
    }

    fn latency(&self, tier: Tier) -> f64 {
        match tier {
            Tier::ScaleUp => self.scale_up_latency,
            Tier::ScaleOut => self.scale_out_latency,
        }
    }
}

/// Ring-model traffic multiplier. All-to-all sends all but its own share.
pub fn comm_factor(kind: CollectiveKind, group_size: usize) -> f64 {
    if group_size <= 1 {
        return 0.0;
    }
    let n = group_size as f64;
    match kind {
        CollectiveKind::AllReduce => 2.0 * (n - 1.0) / n,
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter | CollectiveKind::AllToAll => (n - 1.0) / n,
        CollectiveKind::Broadcast | CollectiveKind::SendRecv | CollectiveKind::Other => 1.0,
    }
}

/// Modeled duration in seconds: tier latency plus bytes × factor over the
/// bottleneck bandwidth. A single-member group costs nothing.
pub fn comm_time_model(kind: CollectiveKind, bytes: u64, group_size: usize, members: &[usize], net: &NetworkConfig) -> f64 {
    if group_size <= 1 {
        return 0.0;
    }
    let tier = net.tier(group_size, members);
    net.latency(tier) + bytes as f64 * comm_factor(kind, group_size) / (net.bandwidth(tier) * 1e9)
}
