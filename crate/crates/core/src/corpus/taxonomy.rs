//! The unified 20-label dialog-act taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of unified dialog acts.
pub const NUM_DAS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnifiedDa {
    Request,
    Select,
    Reqalts,
    Affirm,
    NotSure,
    Inform,
    ImplConfirm,
    ExplConfirm,
    NotifySuccess,
    NotifyFailure,
    Hi,
    Bye,
    Negate,
    Repeat,
    Welcome,
    ThankYou,
    Direct,
    DontUnderstand,
    Propose,
    Offer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaGroup {
    SocialConvention,
    Directive,
    InformationSeeking,
    InformationProviding,
    InformationChecking,
}

impl UnifiedDa {
    pub const ALL: [UnifiedDa; NUM_DAS] = [
        UnifiedDa::Request,
        UnifiedDa::Select,
        UnifiedDa::Reqalts,
        UnifiedDa::Affirm,
        UnifiedDa::NotSure,
        UnifiedDa::Inform,
        UnifiedDa::ImplConfirm,
        UnifiedDa::ExplConfirm,
        UnifiedDa::NotifySuccess,
        UnifiedDa::NotifyFailure,
        UnifiedDa::Hi,
        UnifiedDa::Bye,
        UnifiedDa::Negate,
        UnifiedDa::Repeat,
        UnifiedDa::Welcome,
        UnifiedDa::ThankYou,
        UnifiedDa::Direct,
        UnifiedDa::DontUnderstand,
        UnifiedDa::Propose,
        UnifiedDa::Offer,
    ];

    /// Position in the label vector.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            UnifiedDa::Request => "request",
            UnifiedDa::Select => "select",
            UnifiedDa::Reqalts => "reqalts",
            UnifiedDa::Affirm => "affirm",
            UnifiedDa::NotSure => "not_sure",
            UnifiedDa::Inform => "inform",
            UnifiedDa::ImplConfirm => "impl-confirm",
            UnifiedDa::ExplConfirm => "expl-confirm",
            UnifiedDa::NotifySuccess => "notify_success",
            UnifiedDa::NotifyFailure => "notify_failure",
            UnifiedDa::Hi => "hi",
            UnifiedDa::Bye => "bye",
            UnifiedDa::Negate => "negate",
            UnifiedDa::Repeat => "repeat",
            UnifiedDa::Welcome => "welcome",
            UnifiedDa::ThankYou => "thank_you",
            UnifiedDa::Direct => "direct",
            UnifiedDa::DontUnderstand => "dont_understand",
            UnifiedDa::Propose => "propose",
            UnifiedDa::Offer => "offer",
        }
    }

    pub fn group(self) -> DaGroup {
        use UnifiedDa::*;
        match self {
            Hi | Bye | ThankYou | Repeat | Welcome | DontUnderstand => DaGroup::SocialConvention,
            Propose | Direct => DaGroup::Directive,
            Request | Select | Reqalts => DaGroup::InformationSeeking,
            Affirm | NotSure | Negate | Inform | Offer | NotifySuccess | NotifyFailure => {
                DaGroup::InformationProviding
            }
            ExplConfirm | ImplConfirm => DaGroup::InformationChecking,
        }
    }
}

impl fmt::Display for UnifiedDa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown dialog act {0:?}")]
pub struct UnknownDa(pub String);

impl FromStr for UnifiedDa {
    type Err = UnknownDa;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        // notify-success / notify_success are both seen in the wild
        let norm = match norm.as_str() {
            "notify-success" => "notify_success".to_string(),
            "notify-failure" => "notify_failure".to_string(),
            _ => norm,
        };
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name() == norm)
            .ok_or_else(|| UnknownDa(s.to_string()))
    }
}

impl Serialize for UnifiedDa {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UnifiedDa {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Multi-hot target over the unified taxonomy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DaLabelVector {
    bits: [bool; NUM_DAS],
}

impl DaLabelVector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_labels<I: IntoIterator<Item = UnifiedDa>>(labels: I) -> Self {
        let mut v = Self::default();
        for l in labels {
            v.bits[l.index()] = true;
        }
        v
    }

    pub fn from_bits(bits: [bool; NUM_DAS]) -> Self {
        Self { bits }
    }

    pub fn contains(&self, da: UnifiedDa) -> bool {
        self.bits[da.index()]
    }

    pub fn insert(&mut self, da: UnifiedDa) {
        self.bits[da.index()] = true;
    }

    pub fn bits(&self) -> &[bool; NUM_DAS] {
        &self.bits
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn labels(&self) -> impl Iterator<Item = UnifiedDa> + '_ {
        UnifiedDa::ALL.iter().copied().filter(|d| self.bits[d.index()])
    }

    /// `y` as 0/1 reals.
    pub fn as_targets(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl Serialize for DaLabelVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.labels())
    }
}

impl<'de> Deserialize<'de> for DaLabelVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<UnifiedDa>::deserialize(d)?.into_iter().collect())
    }
}

impl FromIterator<UnifiedDa> for DaLabelVector {
    fn from_iter<T: IntoIterator<Item = UnifiedDa>>(iter: T) -> Self {
        Self::from_labels(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_labels_five_groups() {
        assert_eq!(UnifiedDa::ALL.len(), 20);
        let mut counts = std::collections::BTreeMap::new();
        for d in UnifiedDa::ALL {
            *counts.entry(d.group()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 5);
        assert_eq!(counts[&DaGroup::SocialConvention], 6);
        assert_eq!(counts[&DaGroup::Directive], 2);
        assert_eq!(counts[&DaGroup::InformationSeeking], 3);
        assert_eq!(counts[&DaGroup::InformationProviding], 7);
        assert_eq!(counts[&DaGroup::InformationChecking], 2);
    }

    #[test]
    fn names_round_trip_and_indices_are_dense() {
        for (i, d) in UnifiedDa::ALL.iter().enumerate() {
            assert_eq!(d.index(), i);
            assert_eq!(d.name().parse::<UnifiedDa>().unwrap(), *d);
        }
        assert_eq!("notify-success".parse::<UnifiedDa>().unwrap(), UnifiedDa::NotifySuccess);
        assert!("foo".parse::<UnifiedDa>().is_err());
    }

    #[test]
    fn label_vector_targets() {
        let v = DaLabelVector::from_labels([UnifiedDa::Inform, UnifiedDa::Request]);
        assert_eq!(v.count(), 2);
        let t = v.as_targets();
        assert_eq!(t[UnifiedDa::Inform.index()], 1.0);
        assert_eq!(t.iter().sum::<f64>(), 2.0);
        assert_eq!(v.labels().collect::<Vec<_>>(), vec![UnifiedDa::Request, UnifiedDa::Inform]);
    }
}
