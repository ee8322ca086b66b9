//! Inference task contracts and the backends that satisfy them.
//!
//! Every neural tool is a [`TaskKind`] with a fixed [`Signature`]: ordered
//! input tensor roles and output roles. A [`Backend`] turns a
//! [`TaskRequest`] into a [`TaskResponse`]; the in-process [`StubBackend`]
//! provides deterministic classical fallbacks, and [`TcpBackend`] forwards
//! requests to a worker speaking the [`wire`] protocol.

mod remote;
mod stub;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::raster::Tensor;

pub use remote::{handle_connection, serve, spawn_server, TcpBackend};
pub use stub::StubBackend;

/// Face-parsing label count.
pub const FACE_PARSE_CLASSES: usize = 19;
/// Pascal VOC label count including background.
pub const SEMSEG_CLASSES: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum TaskKind {
    FaceParse = 0,
    Deblur = 1,
    FaceGen = 2,
    DeepColor = 3,
    MonoDepth = 4,
    SuperRes = 5,
    SemSeg = 6,
    Dehaze = 7,
    Matting = 8,
    Denoise = 9,
    Enlighten = 10,
    Echo = 11,
}

/// What a tensor in a task signature carries. All roles are `(C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Rgb,
    GrayOrRgb,
    HintRgba,
    /// Integral class ids below the given count, one channel.
    Labels(usize),
    /// One channel of 0, 128/255 or 1.
    Trimap,
    /// One channel in `[0, 1]`.
    Alpha,
    /// One channel, finite and non-negative.
    Disparity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub inputs: &'static [Role],
    pub outputs: &'static [Role],
}

const RGB_TO_RGB: Signature = Signature {
    inputs: &[Role::Rgb],
    outputs: &[Role::Rgb],
};

impl TaskKind {
    pub const ALL: [TaskKind; 12] = [
        TaskKind::FaceParse,
        TaskKind::Deblur,
        TaskKind::FaceGen,
        TaskKind::DeepColor,
        TaskKind::MonoDepth,
        TaskKind::SuperRes,
        TaskKind::SemSeg,
        TaskKind::Dehaze,
        TaskKind::Matting,
        TaskKind::Denoise,
        TaskKind::Enlighten,
        TaskKind::Echo,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::FaceParse => "faceparse",
            TaskKind::Deblur => "deblur",
            TaskKind::FaceGen => "facegen",
            TaskKind::DeepColor => "deepcolor",
            TaskKind::MonoDepth => "monodepth",
            TaskKind::SuperRes => "superres",
            TaskKind::SemSeg => "semseg",
            TaskKind::Dehaze => "dehaze",
            TaskKind::Matting => "matting",
            TaskKind::Denoise => "denoise",
            TaskKind::Enlighten => "enlighten",
            TaskKind::Echo => "echo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Input and output roles. Echo accepts any tensors and is not described
    /// by a fixed signature; its entry is empty.
    pub fn signature(self) -> Signature {
        match self {
            TaskKind::FaceParse => Signature {
                inputs: &[Role::Rgb],
                outputs: &[Role::Labels(FACE_PARSE_CLASSES)],
            },
            TaskKind::SemSeg => Signature {
                inputs: &[Role::Rgb],
                outputs: &[Role::Labels(SEMSEG_CLASSES)],
            },
            TaskKind::FaceGen => Signature {
                inputs: &[
                    Role::Rgb,
                    Role::Labels(FACE_PARSE_CLASSES),
                    Role::Labels(FACE_PARSE_CLASSES),
                ],
                outputs: &[Role::Rgb],
            },
            TaskKind::DeepColor => Signature {
                inputs: &[Role::GrayOrRgb, Role::HintRgba],
                outputs: &[Role::Rgb],
            },
            TaskKind::MonoDepth => Signature {
                inputs: &[Role::Rgb],
                outputs: &[Role::Disparity],
            },
            TaskKind::Matting => Signature {
                inputs: &[Role::Rgb, Role::Trimap],
                outputs: &[Role::Alpha],
            },
            TaskKind::SuperRes
            | TaskKind::Deblur
            | TaskKind::Dehaze
            | TaskKind::Denoise
            | TaskKind::Enlighten => RGB_TO_RGB,
            TaskKind::Echo => Signature {
                inputs: &[],
                outputs: &[],
            },
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum DevicePolicy {
    #[default]
    Auto,
    ForceCpu,
}

impl DevicePolicy {
    pub fn wire_id(self) -> u8 {
        match self {
            DevicePolicy::Auto => 0,
            DevicePolicy::ForceCpu => 1,
        }
    }

    pub fn from_wire_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(DevicePolicy::Auto),
            1 => Some(DevicePolicy::ForceCpu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Device {
    Cpu,
    Gpu,
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Device::Cpu => "cpu",
            Device::Gpu => "gpu",
        })
    }
}

/// CPU unless the policy allows an accelerator and one is available.
pub fn resolve_device(policy: DevicePolicy, accelerator_available: bool) -> Device {
    match policy {
        DevicePolicy::Auto if accelerator_available => Device::Gpu,
        _ => Device::Cpu,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRequest {
    pub task: TaskKind,
    pub device: DevicePolicy,
    pub params: BTreeMap<String, f64>,
    pub tensors: Vec<Tensor>,
}

impl TaskRequest {
    pub fn new(task: TaskKind, tensors: Vec<Tensor>) -> Self {
        Self {
            task,
            device: DevicePolicy::Auto,
            params: BTreeMap::new(),
            tensors,
        }
    }

    pub fn with_device(mut self, device: DevicePolicy) -> Self {
        self.device = device;
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

/// Outcome of a task. Status codes follow the wire protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskResponse {
    Ok(Vec<Tensor>),
    /// The request was understood but rejected or failed (status 1).
    TaskError(String),
    /// The frame could not be processed at the protocol level (status 2).
    Refused(String),
}

impl TaskResponse {
    pub fn status(&self) -> u8 {
        match self {
            TaskResponse::Ok(_) => 0,
            TaskResponse::TaskError(_) => 1,
            TaskResponse::Refused(_) => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("connection failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(#[from] wire::WireError),
}

/// Something that can run inference tasks. Implementations are shared
/// across threads; each call is independent.
pub trait Backend: Send + Sync {
    fn run_task(&self, request: &TaskRequest) -> Result<TaskResponse, TransportError>;

    /// Whether an accelerator is known to be present; `None` when the device
    /// is decided elsewhere (a remote worker).
    fn accelerator_available(&self) -> Option<bool>;

    fn describe(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn run_task(&self, request: &TaskRequest) -> Result<TaskResponse, TransportError> {
        (**self).run_task(request)
    }

    fn accelerator_available(&self) -> Option<bool> {
        (**self).accelerator_available()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// `stub` or `tcp:<host>:<port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Stub,
    Tcp(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "stub" {
            return Ok(BackendSpec::Stub);
        }
        match s.strip_prefix("tcp:") {
            Some(addr)
                if addr
                    .rsplit_once(':')
                    .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) =>
            {
                Ok(BackendSpec::Tcp(addr.to_string()))
            }
            _ => Err(format!(
                "invalid backend {s:?}; expected \"stub\" or \"tcp:<host>:<port>\""
            )),
        }
    }
}

impl BackendSpec {
    pub fn open(&self) -> Arc<dyn Backend> {
        match self {
            BackendSpec::Stub => Arc::new(StubBackend::new()),
            BackendSpec::Tcp(addr) => Arc::new(TcpBackend::new(addr.clone())),
        }
    }
}

const TRIMAP_UNKNOWN: f32 = 128.0 / 255.0;

fn check_role(role: Role, t: &Tensor, index: usize) -> Result<(usize, usize), String> {
    let (c, h, w) = t.chw().ok_or_else(|| {
        format!(
            "tensor {index} must have shape (C, H, W), got {:?}",
            t.shape()
        )
    })?;
    if h == 0 || w == 0 {
        return Err(format!("tensor {index} has an empty spatial extent"));
    }
    let channels_ok = match role {
        Role::Rgb => c == 3,
        Role::GrayOrRgb => c == 1 || c == 3,
        Role::HintRgba => c == 4,
        Role::Labels(_) | Role::Trimap | Role::Alpha | Role::Disparity => c == 1,
    };
    if !channels_ok {
        return Err(format!("tensor {index} ({role:?}) has {c} channels"));
    }
    let bad = match role {
        Role::Rgb | Role::GrayOrRgb | Role::HintRgba | Role::Alpha => {
            t.data().iter().position(|v| !(0.0..=1.0).contains(v))
        }
        Role::Labels(n) => t
            .data()
            .iter()
            .position(|&v| !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < n)),
        Role::Trimap => t
            .data()
            .iter()
            .position(|&v| v != 0.0 && v != 1.0 && v != TRIMAP_UNKNOWN),
        Role::Disparity => t.data().iter().position(|v| !(v.is_finite() && *v >= 0.0)),
    };
    if let Some(i) = bad {
        return Err(format!(
            "tensor {index} ({role:?}) has invalid value {} at element {i}",
            t.data()[i]
        ));
    }
    Ok((h, w))
}

/// Integral `scale` parameter for super-resolution.
pub fn superres_scale(params: &BTreeMap<String, f64>) -> Result<u32, String> {
    match params.get("scale") {
        Some(&s) if s == 2.0 || s == 3.0 || s == 4.0 => Ok(s as u32),
        Some(s) => Err(format!("scale must be 2, 3 or 4, got {s}")),
        None => Err("missing parameter \"scale\"".to_string()),
    }
}

/// Checks tensor count, roles, value domains, matching spatial sizes and
/// required parameters. The error text is suitable for a task-error reply.
pub fn validate_request(request: &TaskRequest) -> Result<(), String> {
    if request.task == TaskKind::Echo {
        return Ok(());
    }
    let sig = request.task.signature();
    if request.tensors.len() != sig.inputs.len() {
        return Err(format!(
            "{} expects {} input tensors, got {}",
            request.task,
            sig.inputs.len(),
            request.tensors.len()
        ));
    }
    let mut size = None;
    for (i, (role, t)) in sig.inputs.iter().zip(&request.tensors).enumerate() {
        let hw = check_role(*role, t, i)?;
        match size {
            None => size = Some(hw),
            Some(s) if s != hw => {
                return Err(format!(
                    "tensor {i} is {}x{}, expected {}x{}",
                    hw.1, hw.0, s.1, s.0
                ))
            }
            _ => {}
        }
    }
    if request.task == TaskKind::SuperRes {
        superres_scale(&request.params)?;
    }
    Ok(())
}

/// Checks that `outputs` satisfy the task's output roles and shape rules for
/// the given (valid) request.
pub fn validate_outputs(request: &TaskRequest, outputs: &[Tensor]) -> Result<(), String> {
    if request.task == TaskKind::Echo {
        return if outputs == request.tensors.as_slice() {
            Ok(())
        } else {
            Err("echo output differs from input".into())
        };
    }
    let sig = request.task.signature();
    if outputs.len() != sig.outputs.len() {
        return Err(format!(
            "{} must produce {} tensors, got {}",
            request.task,
            sig.outputs.len(),
            outputs.len()
        ));
    }
    let (_, h, w) = request.tensors[0].chw().ok_or("request not validated")?;
    let (eh, ew) = if request.task == TaskKind::SuperRes {
        let s = superres_scale(&request.params)? as usize;
        (h * s, w * s)
    } else {
        (h, w)
    };
    for (i, (role, t)) in sig.outputs.iter().zip(outputs).enumerate() {
        let hw = check_role(*role, t, i)?;
        if hw != (eh, ew) {
            return Err(format!(
                "output {i} is {}x{}, expected {ew}x{eh}",
                hw.1, hw.0
            ));
        }
    }
    Ok(())
}
