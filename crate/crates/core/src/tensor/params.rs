use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::{Result, Scalar, Tensor, TensorError};

/// Parameter partition used by the staged training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Audio encoder.
    Phi,
    /// Audio and text projection mappers.
    Zeta,
    /// Vocabulary embedding table.
    Psi,
    /// Cross-projection.
    Beta,
    /// Decoder body and output head.
    Theta,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Phi, ParamGroup::Zeta, ParamGroup::Psi, ParamGroup::Beta, ParamGroup::Theta];

    pub fn letter(self) -> &'static str {
        match self {
            ParamGroup::Phi => "φ",
            ParamGroup::Zeta => "ζ",
            ParamGroup::Psi => "ψ",
            ParamGroup::Beta => "β",
            ParamGroup::Theta => "θ",
        }
    }

    pub fn ascii(self) -> &'static str {
        match self {
            ParamGroup::Phi => "phi",
            ParamGroup::Zeta => "zeta",
            ParamGroup::Psi => "psi",
            ParamGroup::Beta => "beta",
            ParamGroup::Theta => "theta",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for ParamGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.letter() == s || g.ascii().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown parameter group {s:?}"))
    }
}

/// Small set of parameter groups.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const EMPTY: GroupSet = GroupSet(0);

    pub fn all() -> Self {
        Self::of(&ParamGroup::ALL)
    }

    pub fn of(groups: &[ParamGroup]) -> Self {
        GroupSet(groups.iter().fold(0, |acc, g| acc | g.bit()))
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn insert(&mut self, g: ParamGroup) {
        self.0 |= g.bit();
    }

    pub fn remove(&mut self, g: ParamGroup) {
        self.0 &= !g.bit();
    }

    pub fn complement(self) -> Self {
        GroupSet(!self.0 & GroupSet::all().0)
    }

    pub fn iter(self) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(|g| g.ascii()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<S>,
}

/// Named, grouped parameter tensors owned by a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, groups: GroupSet) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| groups.contains(p.group)).map(|(id, _)| id).collect()
    }

    /// Total element count of the parameters in `groups`.
    pub fn numel(&self, groups: GroupSet) -> usize {
        self.params.iter().filter(|p| groups.contains(p.group)).map(|p| p.value.len()).sum()
    }

    /// Replaces values by name; shapes must match exactly.
    pub fn load_values(&mut self, entries: impl IntoIterator<Item = (String, Tensor<S>)>) -> Result<usize> {
        let mut n = 0;
        for (name, value) in entries {
            let id = self.id(&name)?;
            let slot = &mut self.params[id.0].value;
            if slot.shape() != value.shape() {
                return Err(super::shape_err(
                    "load",
                    format!("{name}: stored {:?}, checkpoint {:?}", slot.shape(), value.shape()),
                ));
            }
            *slot = value;
            n += 1;
        }
        Ok(n)
    }

    /// Text sidecar mapping each parameter name to its group letter.
    pub fn group_sidecar(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            out.push_str(&p.name);
            out.push(' ');
            out.push_str(p.group.letter());
            out.push('\n');
        }
        out
    }

    /// Parses a sidecar written by [`ParamStore::group_sidecar`]. Lines starting with `#`
    /// are ignored.
    pub fn parse_group_sidecar(text: &str) -> std::result::Result<Vec<(String, ParamGroup)>, String> {
        text.lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let (name, group) = l.rsplit_once(' ').ok_or_else(|| format!("bad sidecar line {l:?}"))?;
                Ok((name.to_string(), group.parse()?))
            })
            .collect()
    }

    /// Byte-level snapshot of every parameter in `groups`, for freeze audits.
    pub fn fingerprint(&self, groups: GroupSet) -> Vec<(String, Vec<u8>)> {
        self.params
            .iter()
            .filter(|p| groups.contains(p.group))
            .map(|p| {
                let mut bytes = Vec::with_capacity(p.value.len() * 8);
                for v in p.value.data() {
                    v.write_le(&mut bytes);
                }
                (p.name.clone(), bytes)
            })
            .collect()
    }
}
