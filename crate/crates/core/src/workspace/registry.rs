use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkspaceError;

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortRole {
    Accrual,
    Evaluation,
}

impl CohortRole {
    fn other(self) -> Self {
        match self {
            CohortRole::Accrual => CohortRole::Evaluation,
            CohortRole::Evaluation => CohortRole::Accrual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub name: String,
    pub role: CohortRole,
    pub ids: BTreeSet<String>,
}

/// Which encounter ids a workspace has used for accrual and for
/// evaluation. An id may never hold both roles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRegistry {
    pub cohorts: Vec<CohortEntry>,
}

impl CohortRegistry {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("cohorts").join(REGISTRY_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self, WorkspaceError> {
        let path = Self::path(dir);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                serde_json::from_str(&text).map_err(|e| WorkspaceError::Config(format!("{}: {e}", path.display())))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(WorkspaceError::io(&path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), WorkspaceError> {
        let path = Self::path(dir);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("registry serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| WorkspaceError::io(&path, e))
    }

    pub fn ids_with_role(&self, role: CohortRole) -> BTreeSet<&str> {
        self.cohorts
            .iter()
            .filter(|c| c.role == role)
            .flat_map(|c| c.ids.iter().map(String::as_str))
            .collect()
    }

    /// Records `ids` under `name` in `role`, refusing if any id is already
    /// registered in the other role or the name is taken by the other role.
    pub fn register<I>(&mut self, name: &str, role: CohortRole, ids: I) -> Result<(), WorkspaceError>
    where
        I: IntoIterator<Item = String>,
    {
        let ids: BTreeSet<String> = ids.into_iter().collect();
        if let Some(c) = self.cohorts.iter().find(|c| c.name == name && c.role != role) {
            return Err(WorkspaceError::Governance(format!(
                "cohort `{name}` is already registered for {:?}",
                c.role
            )));
        }
        let others = self.ids_with_role(role.other());
        let overlap: Vec<&str> = ids.iter().map(String::as_str).filter(|i| others.contains(i)).collect();
        if !overlap.is_empty() {
            return Err(WorkspaceError::Governance(format!(
                "encounter ids already registered for {:?}: {}",
                role.other(),
                overlap.join(", ")
            )));
        }
        match self.cohorts.iter_mut().find(|c| c.name == name) {
            Some(c) => c.ids.extend(ids),
            None => self.cohorts.push(CohortEntry {
                name: name.to_string(),
                role,
                ids,
            }),
        }
        Ok(())
    }
}
