use rag_core::{Answer, FilterPredicate, RetrievalParams};
use serde::{Deserialize, Serialize};

/// Per-query or per-session changes to the default retrieval parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterPredicate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_ann: Option<bool>,
}

impl QueryOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, params: &mut RetrievalParams) {
        if let Some(n) = self.top_n {
            params.top_n = n;
        }
        if let Some(s) = self.min_score {
            params.min_score = s;
        }
        if let Some(f) = &self.filter {
            params.filter = Some(f.clone());
        }
        if let Some(a) = self.use_ann {
            params.use_ann = a;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub job_id: u64,
    pub query: String,
    pub answer: Answer,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub corpus: String,
    pub created_at: u64,
    /// Retrieval defaults for this session; cleared when the corpus changes.
    #[serde(default, skip_serializing_if = "QueryOverrides::is_empty")]
    pub defaults: QueryOverrides,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    /// Effective retrieval parameters: built-in defaults, then session
    /// defaults, then per-query overrides.
    pub fn retrieval_params(&self, overrides: &QueryOverrides) -> RetrievalParams {
        let mut p = RetrievalParams::default();
        self.defaults.apply(&mut p);
        overrides.apply(&mut p);
        p
    }
}

pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}
