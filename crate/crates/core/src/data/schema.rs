use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    Categorical { levels: Vec<String>, reference: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        VariableSpec { name: name.into(), kind: VariableKind::Continuous }
    }

    /// Categorical variable whose reference level is the first one listed.
    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        let reference = levels.first().cloned().unwrap_or_default();
        VariableSpec { name: name.into(), kind: VariableKind::Categorical { levels, reference } }
    }

    pub fn with_reference(mut self, level: impl Into<String>) -> Self {
        if let VariableKind::Categorical { reference, .. } = &mut self.kind {
            *reference = level.into();
        }
        self
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, VariableKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            VariableKind::Categorical { levels, .. } => Some(levels),
            VariableKind::Continuous => None,
        }
    }

    /// Index of the reference level among `levels`.
    pub fn reference_index(&self) -> Option<usize> {
        match &self.kind {
            VariableKind::Categorical { levels, reference } => levels.iter().position(|l| l == reference),
            VariableKind::Continuous => None,
        }
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels().and_then(|ls| ls.iter().position(|l| l == level))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidSchema("variable with an empty name".into()));
        }
        if let VariableKind::Categorical { levels, reference } = &self.kind {
            if levels.is_empty() {
                return Err(Error::InvalidSchema(format!("`{}` has no levels", self.name)));
            }
            let mut seen = HashSet::new();
            for l in levels {
                if l.is_empty() {
                    return Err(Error::InvalidSchema(format!("`{}` has an empty level", self.name)));
                }
                if !seen.insert(l) {
                    return Err(Error::InvalidSchema(format!("`{}` repeats level `{l}`", self.name)));
                }
            }
            if !levels.contains(reference) {
                return Err(Error::InvalidSchema(format!(
                    "`{}`: reference `{reference}` is not a declared level",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// An ordered, validated list of variables with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VariableSpec>", into = "Vec<VariableSpec>")]
pub struct Schema {
    vars: Vec<VariableSpec>,
}

impl Schema {
    pub fn new(vars: Vec<VariableSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        for v in &vars {
            v.validate()?;
            if !names.insert(v.name.clone()) {
                return Err(Error::InvalidSchema(format!("duplicate variable `{}`", v.name)));
            }
        }
        Ok(Schema { vars })
    }

    pub fn vars(&self) -> &[VariableSpec] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&VariableSpec> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|v| v.name.as_str())
    }
}

impl TryFrom<Vec<VariableSpec>> for Schema {
    type Error = Error;
    fn try_from(vars: Vec<VariableSpec>) -> Result<Self> {
        Schema::new(vars)
    }
}

impl From<Schema> for Vec<VariableSpec> {
    fn from(s: Schema) -> Self {
        s.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_categoricals_and_duplicates() {
        let dup = VariableSpec::categorical("sex", ["m", "m"]);
        assert!(matches!(dup.validate(), Err(Error::InvalidSchema(_))));
        let bad_ref = VariableSpec::categorical("sex", ["m", "f"]).with_reference("x");
        assert!(bad_ref.validate().is_err());
        let empty = VariableSpec::categorical("sex", Vec::<String>::new());
        assert!(empty.validate().is_err());
        let twice = Schema::new(vec![VariableSpec::continuous("a"), VariableSpec::continuous("a")]);
        assert!(twice.is_err());
    }

    #[test]
    fn reference_defaults_to_first_level() {
        let v = VariableSpec::categorical("race", ["white", "hispanic"]);
        assert_eq!(v.reference_index(), Some(0));
        assert_eq!(v.with_reference("hispanic").reference_index(), Some(1));
    }
}
