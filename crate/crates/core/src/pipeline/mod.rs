//! Declarative multi-step workflows over a layer stack.
//!
//! A [`PipelineSpec`] is an ordered list of steps. Each step names a tool,
//! its parameters, the layers it reads and the single layer it adds. The
//! whole spec is checked against the stack before anything runs, and a run
//! only ever appends layers: the input stack is returned untouched and the
//! result shares every original layer with it.

mod builtins;
mod tools;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::backend::{Backend, DevicePolicy};
use crate::raster::{Layer, LayerStack};

pub use builtins::{added_layers, builtin, BuiltinError, BuiltinOptions, BUILTINS};
pub use tools::{tool_names, PaletteKind, ToolCall, CLASSICAL_TOOLS};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub tool: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output: String,
}

impl Step {
    pub fn new(tool: &str, inputs: &[&str], output: &str) -> Self {
        Self {
            tool: tool.to_string(),
            params: Map::new(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

impl PipelineSpec {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Checks the spec against `stack` and returns the parsed tool calls.
    pub fn validate(&self, stack: &LayerStack) -> Result<Vec<ToolCall>, PipelineError> {
        let mut known: Vec<&str> = stack.layers().iter().map(|l| l.name()).collect();
        let mut calls = Vec::with_capacity(self.steps.len());
        for (i, step) in self.steps.iter().enumerate() {
            let fail = |message: String| PipelineError::Validation { step: i, message };
            let call = ToolCall::parse(&step.tool, &step.params)
                .map_err(|e| fail(format!("{}: {e}", step.tool)))?;
            if let Some(n) = call.arity() {
                if step.inputs.len() != n {
                    return Err(fail(format!(
                        "{} takes {n} input layer(s), got {}",
                        step.tool,
                        step.inputs.len()
                    )));
                }
            }
            if let Some(missing) = step
                .inputs
                .iter()
                .find(|name| !known.contains(&name.as_str()))
            {
                return Err(fail(format!("input layer {missing:?} does not exist")));
            }
            if step.output.is_empty() {
                return Err(fail("output layer name is empty".into()));
            }
            if known.contains(&step.output.as_str()) {
                return Err(fail(format!(
                    "output layer {:?} already exists",
                    step.output
                )));
            }
            known.push(&step.output);
            calls.push(call);
        }
        Ok(calls)
    }
}

/// How a failed step should be treated by callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad parameters or layers; retrying will not help.
    Input,
    /// The backend understood the request and rejected or failed it.
    Task,
    /// The backend could not be reached or refused the frame; retryable.
    Transport,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StepError {
    #[error("{0}")]
    Input(String),
    #[error("backend task error: {0}")]
    Task(String),
    #[error("backend transport error: {0}")]
    Transport(String),
}

impl StepError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            StepError::Input(_) => ErrorCategory::Input,
            StepError::Task(_) => ErrorCategory::Task,
            StepError::Transport(_) => ErrorCategory::Transport,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Rejected before any step ran.
    #[error("step {step}: {message}")]
    Validation { step: usize, message: String },
    /// Step `step` failed; `partial` holds the input layers plus the outputs
    /// of every earlier step.
    #[error("step {step} ({tool}) failed: {source}")]
    Step {
        step: usize,
        tool: String,
        partial: LayerStack,
        #[source]
        source: StepError,
    },
}

impl PipelineError {
    pub fn step(&self) -> usize {
        match self {
            PipelineError::Validation { step, .. } | PipelineError::Step { step, .. } => *step,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Validation { .. } => ErrorCategory::Input,
            PipelineError::Step { source, .. } => source.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub device: DevicePolicy,
    /// Run data-independent steps on separate threads. The result is the
    /// same as a sequential run.
    pub parallel: bool,
}

pub fn run_pipeline(
    stack: &LayerStack,
    spec: &PipelineSpec,
    backend: &dyn Backend,
) -> Result<LayerStack, PipelineError> {
    run_pipeline_with(stack, spec, backend, &RunOptions::default())
}

pub fn run_pipeline_with(
    stack: &LayerStack,
    spec: &PipelineSpec,
    backend: &dyn Backend,
    options: &RunOptions,
) -> Result<LayerStack, PipelineError> {
    let calls = spec.validate(stack)?;
    let plan = Plan::new(stack, spec, &calls);
    let mut results: Vec<Option<Result<Arc<Layer>, StepError>>> = vec![None; calls.len()];
    if options.parallel {
        plan.run_waves(&mut results, backend, options.device);
    }
    // Anything not computed yet (everything, in sequential mode, or the
    // steps after a failed wave) runs in order, so a failure always leaves
    // exactly the outputs of lower-numbered steps behind.
    let mut out = stack.clone();
    for i in 0..calls.len() {
        if results[i].is_none() {
            results[i] = Some(plan.run_step(i, &results, backend, options.device));
        }
        match results[i].as_ref().expect("just computed") {
            Ok(layer) => {
                out = out
                    .add_layer((**layer).clone())
                    .map_err(|e| PipelineError::Step {
                        step: i,
                        tool: spec.steps[i].tool.clone(),
                        partial: out.clone(),
                        source: StepError::Input(e.to_string()),
                    })?;
            }
            Err(e) => {
                return Err(PipelineError::Step {
                    step: i,
                    tool: spec.steps[i].tool.clone(),
                    partial: out,
                    source: e.clone(),
                })
            }
        }
    }
    Ok(out)
}

struct Plan<'a> {
    stack: &'a LayerStack,
    spec: &'a PipelineSpec,
    calls: &'a [ToolCall],
    producer: HashMap<&'a str, usize>,
}

impl<'a> Plan<'a> {
    fn new(stack: &'a LayerStack, spec: &'a PipelineSpec, calls: &'a [ToolCall]) -> Self {
        let producer = spec
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| (s.output.as_str(), i))
            .collect();
        Self {
            stack,
            spec,
            calls,
            producer,
        }
    }

    /// Steps whose outputs step `i` reads.
    fn deps(&self, i: usize) -> Vec<usize> {
        if self.calls[i] == ToolCall::Composite && self.spec.steps[i].inputs.is_empty() {
            return (0..i).collect();
        }
        self.spec.steps[i]
            .inputs
            .iter()
            .filter_map(|name| self.producer.get(name.as_str()).copied())
            .filter(|&j| j < i)
            .collect()
    }

    fn run_step(
        &self,
        i: usize,
        results: &[Option<Result<Arc<Layer>, StepError>>],
        backend: &dyn Backend,
        device: DevicePolicy,
    ) -> Result<Arc<Layer>, StepError> {
        let step = &self.spec.steps[i];
        let lookup = |name: &str| -> Result<Arc<Layer>, StepError> {
            if let Some(&j) = self.producer.get(name).filter(|&&j| j < i) {
                return match &results[j] {
                    Some(Ok(layer)) => Ok(Arc::clone(layer)),
                    _ => Err(StepError::Input(format!("layer {name:?} was not produced"))),
                };
            }
            self.stack
                .get(name)
                .cloned()
                .ok_or_else(|| StepError::Input(format!("layer {name:?} does not exist")))
        };
        let inputs = step
            .inputs
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>, _>>()?;
        let prefix = || {
            results[..i]
                .iter()
                .filter_map(|r| r.as_ref().and_then(|r| r.as_ref().ok()))
                .fold(self.stack.clone(), |s, l| {
                    s.add_layer((**l).clone()).expect("validated names")
                })
        };
        info!(
            "step {i}: {} {:?} -> {}",
            step.tool, step.inputs, step.output
        );
        let buffer = tools::execute(&self.calls[i], &inputs, prefix, backend, device)?;
        let offset = match (&self.calls[i], inputs.first()) {
            (ToolCall::Composite, _) | (_, None) => (0, 0),
            (ToolCall::Resize { scale }, Some(l)) => scaled(l.offset(), *scale),
            (ToolCall::Task { params, .. }, Some(l)) if params.contains_key("scale") => {
                scaled(l.offset(), params["scale"] as u32)
            }
            (_, Some(l)) => l.offset(),
        };
        let layer = Layer::new(step.output.clone(), buffer)
            .map_err(|e| StepError::Input(e.to_string()))?
            .with_offset(offset.0, offset.1);
        Ok(Arc::new(layer))
    }

    /// Executes steps level by level, each level's steps concurrently,
    /// until every step ran or a level produced an error.
    fn run_waves(
        &self,
        results: &mut [Option<Result<Arc<Layer>, StepError>>],
        backend: &dyn Backend,
        device: DevicePolicy,
    ) {
        let n = self.calls.len();
        let mut level = vec![0usize; n];
        for i in 0..n {
            level[i] = self
                .deps(i)
                .iter()
                .map(|&j| level[j] + 1)
                .max()
                .unwrap_or(0);
        }
        let depth = level.iter().max().map_or(0, |m| m + 1);
        for wave in 0..depth {
            let members: Vec<usize> = (0..n).filter(|&i| level[i] == wave).collect();
            let snapshot: &[Option<Result<Arc<Layer>, StepError>>] = results;
            let done: Vec<(usize, Result<Arc<Layer>, StepError>)> = thread::scope(|s| {
                let handles: Vec<_> = members
                    .iter()
                    .map(|&i| s.spawn(move || (i, self.run_step(i, snapshot, backend, device))))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("step thread panicked"))
                    .collect()
            });
            let failed = done.iter().any(|(_, r)| r.is_err());
            for (i, r) in done {
                results[i] = Some(r);
            }
            if failed {
                return;
            }
        }
    }
}

fn scaled((x, y): (i32, i32), scale: u32) -> (i32, i32) {
    let s = scale as i32;
    (x.saturating_mul(s), y.saturating_mul(s))
}
