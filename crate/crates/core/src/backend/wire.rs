//! Binary framing for task requests and responses.
//!
//! All integers are little-endian. A request is
//!
//! ```text
//! "GML1" u8:task u8:device u16:nparams { u16:len key f64:value }* u16:ntensors tensor*
//! ```
//!
//! and a response is `"GML1" u8:status` followed either by `u32:len message`
//! (status 1 or 2) or by `u16:ntensors tensor*` (status 0). A tensor is
//! `u8:dtype(0 = f32) u8:rank u32:dim* f32:payload*`.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use super::{DevicePolicy, TaskKind, TaskRequest, TaskResponse};
use crate::raster::Tensor;

pub const MAGIC: [u8; 4] = *b"GML1";
pub const DTYPE_F32: u8 = 0;

/// Upper bound on elements in one tensor (1 GiB of f32).
pub const MAX_ELEMENTS: usize = 1 << 28;
pub const MAX_RANK: usize = 8;
pub const MAX_MESSAGE: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    /// The frame was read completely, so the stream is still in sync.
    #[error("unknown task id {0}")]
    UnknownTask(u8),
    #[error("unknown device policy {0}")]
    BadDevice(u8),
    #[error("unsupported dtype {0}")]
    BadDtype(u8),
    #[error("unknown status {0}")]
    BadStatus(u8),
    #[error("{0} exceeds protocol limits")]
    TooLarge(&'static str),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("invalid tensor: {0}")]
    Tensor(String),
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_magic(r: &mut impl Read) -> Result<(), WireError> {
    let magic = read_array::<4>(r)?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    Ok(())
}

fn read_string(r: &mut impl Read, len: usize, what: &'static str) -> Result<String, WireError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| WireError::Utf8(what))
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor, WireError> {
    let dtype = read_u8(r)?;
    if dtype != DTYPE_F32 {
        return Err(WireError::BadDtype(dtype));
    }
    let rank = read_u8(r)? as usize;
    if rank > MAX_RANK {
        return Err(WireError::TooLarge("tensor rank"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let d = read_u32(r)? as usize;
        count = count
            .checked_mul(d)
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or(WireError::TooLarge("tensor size"))?;
        shape.push(d);
    }
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| WireError::Tensor(e.to_string()))
}

fn read_tensors(r: &mut impl Read) -> Result<Vec<Tensor>, WireError> {
    let n = read_u16(r)?;
    (0..n).map(|_| read_tensor(r)).collect()
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<(), WireError> {
    if t.shape().len() > MAX_RANK {
        return Err(WireError::TooLarge("tensor rank"));
    }
    if t.data().len() > MAX_ELEMENTS {
        return Err(WireError::TooLarge("tensor size"));
    }
    let mut buf = Vec::with_capacity(2 + 4 * t.shape().len() + 4 * t.data().len());
    buf.push(DTYPE_F32);
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| WireError::TooLarge("tensor dimension"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_tensors(w: &mut impl Write, tensors: &[Tensor]) -> Result<(), WireError> {
    let n = u16::try_from(tensors.len()).map_err(|_| WireError::TooLarge("tensor count"))?;
    w.write_all(&n.to_le_bytes())?;
    tensors.iter().try_for_each(|t| write_tensor(w, t))
}

/// Reads one request frame. Returns `Ok(None)` on a clean end of stream
/// before the first byte of a frame.
pub fn read_request(r: &mut impl Read) -> Result<Option<TaskRequest>, WireError> {
    let mut first = [0u8; 1];
    loop {
        match r.read(&mut first) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let rest = read_array::<3>(r)?;
    let magic = [first[0], rest[0], rest[1], rest[2]];
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let task_id = read_u8(r)?;
    let device_id = read_u8(r)?;
    let device = DevicePolicy::from_wire_id(device_id).ok_or(WireError::BadDevice(device_id))?;
    let nparams = read_u16(r)?;
    let mut params = BTreeMap::new();
    for _ in 0..nparams {
        let len = read_u16(r)? as usize;
        let key = read_string(r, len, "parameter key")?;
        let value = f64::from_le_bytes(read_array(r)?);
        params.insert(key, value);
    }
    let tensors = read_tensors(r)?;
    let task = TaskKind::from_id(task_id).ok_or(WireError::UnknownTask(task_id))?;
    Ok(Some(TaskRequest {
        task,
        device,
        params,
        tensors,
    }))
}

pub fn encode_request(req: &TaskRequest) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.push(req.task.id());
    buf.push(req.device.wire_id());
    let n = u16::try_from(req.params.len()).map_err(|_| WireError::TooLarge("parameter count"))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for (key, value) in &req.params {
        let len = u16::try_from(key.len()).map_err(|_| WireError::TooLarge("parameter key"))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(key.as_bytes());
        buf.extend_from_slice(&value.to_le_bytes());
    }
    write_tensors(&mut buf, &req.tensors)?;
    Ok(buf)
}

pub fn write_request(w: &mut impl Write, req: &TaskRequest) -> Result<(), WireError> {
    w.write_all(&encode_request(req)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<TaskResponse, WireError> {
    read_magic(r)?;
    let status = read_u8(r)?;
    match status {
        0 => Ok(TaskResponse::Ok(read_tensors(r)?)),
        1 | 2 => {
            let len = read_u32(r)? as usize;
            if len > MAX_MESSAGE {
                return Err(WireError::TooLarge("message"));
            }
            let msg = read_string(r, len, "message")?;
            Ok(if status == 1 {
                TaskResponse::TaskError(msg)
            } else {
                TaskResponse::Refused(msg)
            })
        }
        s => Err(WireError::BadStatus(s)),
    }
}

pub fn encode_response(resp: &TaskResponse) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.push(resp.status());
    match resp {
        TaskResponse::Ok(tensors) => write_tensors(&mut buf, tensors)?,
        TaskResponse::TaskError(msg) | TaskResponse::Refused(msg) => {
            let bytes = &msg.as_bytes()[..msg.len().min(MAX_MESSAGE)];
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(bytes);
        }
    }
    Ok(buf)
}

pub fn write_response(w: &mut impl Write, resp: &TaskResponse) -> Result<(), WireError> {
    w.write_all(&encode_response(resp)?)?;
    w.flush()?;
    Ok(())
}
