//! Name-keyed factories for the interchangeable strategies: policies,
//! alignment evaluators and planners. Lookups happen at run time, so new
//! variants only need a `register_*` call.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::adapter::ModelAdapter;
use crate::alignment::{DeltaEvaluator, LlmEvaluator, RuleBasedEvaluator};
use crate::model::HeuristicConfig;
use crate::planner::{EvenPlanner, LlmPlanner, Planner};
use crate::policy::{FixedStepsPolicy, HeuristicPolicy, LlmPolicy, NoCommPolicy, Policy};
use crate::scheduler::Strategies;

/// What a factory may draw on when building a strategy.
#[derive(Clone, Default)]
pub struct BuildContext {
    pub heuristic: HeuristicConfig,
    pub adapter: Option<Arc<dyn ModelAdapter>>,
}

impl BuildContext {
    fn adapter(&self, kind: &'static str, name: &str) -> Result<Arc<dyn ModelAdapter>, RegistryError> {
        self.adapter.clone().ok_or_else(|| RegistryError::NeedsAdapter { kind, name: name.to_string() })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} {name:?}; known: {known}")]
    Unknown { kind: &'static str, name: String, known: String },
    #[error("{kind} {name:?} needs a model endpoint")]
    NeedsAdapter { kind: &'static str, name: String },
}

type Factory<T> = Box<dyn Fn(&BuildContext) -> Result<Arc<T>, RegistryError> + Send + Sync>;

struct Entry<T: ?Sized> {
    needs_model: bool,
    make: Factory<T>,
}

struct Table<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: ?Sized> Table<T> {
    fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    fn entry(&self, name: &str) -> Result<&Entry<T>, RegistryError> {
        self.entries.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            known: self.entries.keys().cloned().collect::<Vec<_>>().join(", "),
        })
    }

    fn build(&self, name: &str, ctx: &BuildContext) -> Result<Arc<T>, RegistryError> {
        (self.entry(name)?.make)(ctx)
    }
}

pub struct Registry {
    policies: Table<dyn Policy>,
    evaluators: Table<dyn DeltaEvaluator>,
    planners: Table<dyn Planner>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self { policies: Table::new("policy"), evaluators: Table::new("evaluator"), planners: Table::new("planner") }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_policy("no_comm", false, |_| Ok(Arc::new(NoCommPolicy)));
        r.register_policy("fixed_steps", false, |_| Ok(Arc::new(FixedStepsPolicy::default())));
        r.register_policy("c2c_heuristic", false, |c| Ok(Arc::new(HeuristicPolicy::new(c.heuristic.clone()))));
        r.register_policy("c2c_llm", true, |c| {
            let fallback = HeuristicPolicy::new(c.heuristic.clone());
            Ok(Arc::new(LlmPolicy::new(c.adapter("policy", "c2c_llm")?, fallback)))
        });
        r.register_evaluator("rule_based", false, |_| Ok(Arc::new(RuleBasedEvaluator)));
        r.register_evaluator("llm", true, |c| Ok(Arc::new(LlmEvaluator::new(c.adapter("evaluator", "llm")?))));
        r.register_planner("even", false, |_| Ok(Arc::new(EvenPlanner)));
        r.register_planner("llm", true, |c| Ok(Arc::new(LlmPlanner::new(c.adapter("planner", "llm")?))));
        r
    }

    pub fn register_policy<F>(&mut self, name: &str, needs_model: bool, make: F)
    where
        F: Fn(&BuildContext) -> Result<Arc<dyn Policy>, RegistryError> + Send + Sync + 'static,
    {
        self.policies.entries.insert(name.into(), Entry { needs_model, make: Box::new(make) });
    }

    pub fn register_evaluator<F>(&mut self, name: &str, needs_model: bool, make: F)
    where
        F: Fn(&BuildContext) -> Result<Arc<dyn DeltaEvaluator>, RegistryError> + Send + Sync + 'static,
    {
        self.evaluators.entries.insert(name.into(), Entry { needs_model, make: Box::new(make) });
    }

    pub fn register_planner<F>(&mut self, name: &str, needs_model: bool, make: F)
    where
        F: Fn(&BuildContext) -> Result<Arc<dyn Planner>, RegistryError> + Send + Sync + 'static,
    {
        self.planners.entries.insert(name.into(), Entry { needs_model, make: Box::new(make) });
    }

    pub fn policy(&self, name: &str, ctx: &BuildContext) -> Result<Arc<dyn Policy>, RegistryError> {
        self.policies.build(name, ctx)
    }

    pub fn evaluator(&self, name: &str, ctx: &BuildContext) -> Result<Arc<dyn DeltaEvaluator>, RegistryError> {
        self.evaluators.build(name, ctx)
    }

    pub fn planner(&self, name: &str, ctx: &BuildContext) -> Result<Arc<dyn Planner>, RegistryError> {
        self.planners.build(name, ctx)
    }

    pub fn policy_names(&self) -> Vec<&str> {
        self.policies.entries.keys().map(String::as_str).collect()
    }

    pub fn evaluator_names(&self) -> Vec<&str> {
        self.evaluators.entries.keys().map(String::as_str).collect()
    }

    pub fn planner_names(&self) -> Vec<&str> {
        self.planners.entries.keys().map(String::as_str).collect()
    }

    /// Whether any of the named strategies talks to an external model.
    /// Unknown names are reported as errors.
    pub fn needs_model(&self, policy: &str, evaluator: &str, planner: &str) -> Result<bool, RegistryError> {
        Ok(self.policies.entry(policy)?.needs_model
            || self.evaluators.entry(evaluator)?.needs_model
            || self.planners.entry(planner)?.needs_model)
    }

    pub fn strategies(
        &self,
        policy: &str,
        evaluator: &str,
        planner: &str,
        ctx: &BuildContext,
    ) -> Result<Strategies, RegistryError> {
        Ok(Strategies {
            policy: self.policy(policy, ctx)?,
            evaluator: self.evaluator(evaluator, ctx)?,
            planner: self.planner(planner, ctx)?,
        })
    }
}
