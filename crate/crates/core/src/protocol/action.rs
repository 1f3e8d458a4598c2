use serde::{Deserialize, Serialize};

use super::parse::{AgentStep, StepKind};
use crate::encounter::{split_lab_names, ImagingAliases, WorkupAction};

/// The six tools of the constrained action schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToolKind {
    PhysicalExamination,
    LaboratoryTests,
    Imaging,
    ExperienceSearch,
    GuidelineSearch,
    PubMedSearch,
}

impl ToolKind {
    pub const ALL: [ToolKind; 6] = [
        ToolKind::PhysicalExamination,
        ToolKind::LaboratoryTests,
        ToolKind::Imaging,
        ToolKind::ExperienceSearch,
        ToolKind::GuidelineSearch,
        ToolKind::PubMedSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::PhysicalExamination => "Physical Examination",
            ToolKind::LaboratoryTests => "Laboratory Tests",
            ToolKind::Imaging => "Imaging",
            ToolKind::ExperienceSearch => "Experience Search",
            ToolKind::GuidelineSearch => "Guideline Search",
            ToolKind::PubMedSearch => "PubMed Search",
        }
    }

    /// Exact match on the tool name.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ValidatedAction {
    PhysicalExamination,
    LaboratoryTests { lab_names: Vec<String> },
    Imaging { region: String, modality: String },
    ExperienceSearch { query: String },
    GuidelineSearch { query: String },
    PubMedSearch { query: String },
}

impl ValidatedAction {
    pub fn kind(&self) -> ToolKind {
        match self {
            ValidatedAction::PhysicalExamination => ToolKind::PhysicalExamination,
            ValidatedAction::LaboratoryTests { .. } => ToolKind::LaboratoryTests,
            ValidatedAction::Imaging { .. } => ToolKind::Imaging,
            ValidatedAction::ExperienceSearch { .. } => ToolKind::ExperienceSearch,
            ValidatedAction::GuidelineSearch { .. } => ToolKind::GuidelineSearch,
            ValidatedAction::PubMedSearch { .. } => ToolKind::PubMedSearch,
        }
    }

    /// The workup action this represents, for evaluation-type tools.
    pub fn as_workup(&self) -> Option<WorkupAction> {
        match self {
            ValidatedAction::PhysicalExamination => Some(WorkupAction::PhysicalExamination),
            ValidatedAction::LaboratoryTests { lab_names } => Some(WorkupAction::LaboratoryTests {
                names: lab_names.clone(),
            }),
            ValidatedAction::Imaging { region, modality } => Some(WorkupAction::Imaging {
                region: region.clone(),
                modality: modality.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidAction {
    #[error("not an action step")]
    NotAnAction,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("region and modality required (got `{0}`)")]
    RegionAndModalityRequired(String),
    #[error("at least one laboratory test name required")]
    NoLabNames,
    #[error("{0} requires a query in Action Input")]
    EmptyQuery(&'static str),
}

pub fn validate_action(step: &AgentStep, aliases: &ImagingAliases) -> Result<ValidatedAction, InvalidAction> {
    let (name, input) = match &step.kind {
        StepKind::ActionStep {
            action_name,
            action_input,
        } => (action_name.trim(), action_input.trim()),
        _ => return Err(InvalidAction::NotAnAction),
    };
    let tool = ToolKind::from_name(name).ok_or_else(|| InvalidAction::UnknownTool(name.to_string()))?;
    let query = |tool: ToolKind| {
        if input.is_empty() {
            Err(InvalidAction::EmptyQuery(tool.name()))
        } else {
            Ok(input.to_string())
        }
    };
    Ok(match tool {
        ToolKind::PhysicalExamination => ValidatedAction::PhysicalExamination,
        ToolKind::LaboratoryTests => {
            let lab_names = split_lab_names(input);
            if lab_names.is_empty() {
                return Err(InvalidAction::NoLabNames);
            }
            ValidatedAction::LaboratoryTests { lab_names }
        }
        ToolKind::Imaging => {
            let (region, modality) = aliases
                .split_request(input)
                .ok_or_else(|| InvalidAction::RegionAndModalityRequired(input.to_string()))?;
            ValidatedAction::Imaging { region, modality }
        }
        ToolKind::ExperienceSearch => ValidatedAction::ExperienceSearch { query: query(tool)? },
        ToolKind::GuidelineSearch => ValidatedAction::GuidelineSearch { query: query(tool)? },
        ToolKind::PubMedSearch => ValidatedAction::PubMedSearch { query: query(tool)? },
    })
}
