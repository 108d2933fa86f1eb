// SPDX-License-Identifier: MIT OR Apache-2.0

//! Length-prefixed binary framing for out-of-process backends.
//!
//! ```text
//! frame   := len:u32le payload[len]
//! payload := "ARCJ" version:u16le kind:u8 body
//! ```
//!
//! All integers are little-endian, floats are IEEE-754 binary32. Bodies:
//!
//! | kind | message            | body                                                        |
//! |------|--------------------|-------------------------------------------------------------|
//! | 0x01 | Handshake          | name:str L H d vocab max_ctx max_par eos (u32; eos `u32::MAX` = none) |
//! | 0x02 | ScoreRequest       | id prompt:toks response:toks selectors masked:(u32 n, (layer, head)*) |
//! | 0x03 | ScoreResponse      | id selectors positions:u32 dist*                             |
//! | 0x04 | GenerateRequest    | id prompt:toks max_len:u32                                   |
//! | 0x05 | GenerateResponse   | id tokens:toks n:u32 dist*                                   |
//! | 0x06 | TokenizeRequest    | id text:str                                                  |
//! | 0x07 | TokenizeResponse   | id tokens:toks                                               |
//! | 0x08 | DetokenizeRequest  | id tokens:toks                                               |
//! | 0x09 | DetokenizeResponse | id text:str                                                  |
//! | 0x0A | UnembedRequest     | id tokens:toks                                               |
//! | 0x0B | UnembedResponse    | id n:u32 d:u32 f32[n*d]                                      |
//! | 0x7F | Error              | id code:u8 a:u32 b:u32 message:str                           |
//!
//! `str` is `u32 byte length + UTF-8`, `toks` is `u32 count + u32*`. A
//! selector list is `u32 count` followed by tagged selectors:
//! `0` final, `1 layer head` attention head, `2 layer` MLP,
//! `3 layer stage:u8` residual (0 pre, 1 mid, 2 post).
//! A distribution is `form:u8 vocab:u32` then, for dense (form 0),
//! `count:u32 f32[count]`, or for sparse (form 1),
//! `count:u32 (token:u32 prob:f32)* tail_mass:f32`.

use std::io::{self, Read, Write};

use super::{
    BackendError, BackendResult, ComponentSelector, Distribution, Generation, HeadId, ModelInfo,
    ResidualStage, ScoreRequest, ScoreResponse,
};

pub const MAGIC: &[u8; 4] = b"ARCJ";
pub const VERSION: u16 = 1;
/// Upper bound on a single payload.
pub const MAX_FRAME: usize = 1 << 30;

const NO_EOS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Unsupported = 1,
    ContextTooLong = 2,
    InvalidRequest = 3,
    Numerical = 4,
    Failure = 5,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Handshake(ModelInfo),
    ScoreRequest { id: u32, request: ScoreRequest },
    ScoreResponse { id: u32, response: ScoreResponse },
    GenerateRequest { id: u32, prompt: Vec<u32>, max_len: u32 },
    GenerateResponse { id: u32, generation: Generation },
    TokenizeRequest { id: u32, text: String },
    TokenizeResponse { id: u32, tokens: Vec<u32> },
    DetokenizeRequest { id: u32, tokens: Vec<u32> },
    DetokenizeResponse { id: u32, text: String },
    UnembedRequest { id: u32, tokens: Vec<u32> },
    UnembedResponse { id: u32, vectors: Vec<Vec<f32>> },
    Error { id: u32, code: ErrorCode, a: u32, b: u32, message: String },
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Handshake(_) => 0x01,
            Message::ScoreRequest { .. } => 0x02,
            Message::ScoreResponse { .. } => 0x03,
            Message::GenerateRequest { .. } => 0x04,
            Message::GenerateResponse { .. } => 0x05,
            Message::TokenizeRequest { .. } => 0x06,
            Message::TokenizeResponse { .. } => 0x07,
            Message::DetokenizeRequest { .. } => 0x08,
            Message::DetokenizeResponse { .. } => 0x09,
            Message::UnembedRequest { .. } => 0x0A,
            Message::UnembedResponse { .. } => 0x0B,
            Message::Error { .. } => 0x7F,
        }
    }

    /// Error frame carrying `err` for request `id`.
    pub fn from_error(id: u32, err: &BackendError) -> Self {
        let (code, a, b) = match err {
            BackendError::Unsupported(_) => (ErrorCode::Unsupported, 0, 0),
            BackendError::ContextTooLong { len, max } => {
                (ErrorCode::ContextTooLong, *len as u32, *max as u32)
            }
            BackendError::InvalidRequest(_) => (ErrorCode::InvalidRequest, 0, 0),
            BackendError::Numerical(_) => (ErrorCode::Numerical, 0, 0),
            _ => (ErrorCode::Failure, 0, 0),
        };
        let message = match err {
            BackendError::Unsupported(m)
            | BackendError::InvalidRequest(m)
            | BackendError::Numerical(m)
            | BackendError::Failure(m) => m.clone(),
            other => other.to_string(),
        };
        Message::Error {
            id,
            code,
            a,
            b,
            message,
        }
    }

    /// The backend error an error frame stands for.
    pub fn to_error(&self) -> Option<BackendError> {
        let Message::Error {
            code, a, b, message, ..
        } = self
        else {
            return None;
        };
        Some(match code {
            ErrorCode::Unsupported => BackendError::Unsupported(message.clone()),
            ErrorCode::ContextTooLong => BackendError::ContextTooLong {
                len: *a as usize,
                max: *b as usize,
            },
            ErrorCode::InvalidRequest => BackendError::InvalidRequest(message.clone()),
            ErrorCode::Numerical => BackendError::Numerical(message.clone()),
            ErrorCode::Failure => BackendError::Failure(message.clone()),
        })
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u32(v as u32);
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn toks(&mut self, t: &[u32]) {
        self.usize(t.len());
        for &x in t {
            self.u32(x);
        }
    }
    fn selectors(&mut self, sels: &[ComponentSelector]) {
        self.usize(sels.len());
        for s in sels {
            match *s {
                ComponentSelector::Final => self.u8(0),
                ComponentSelector::AttnHead { layer, head } => {
                    self.u8(1);
                    self.usize(layer);
                    self.usize(head);
                }
                ComponentSelector::Mlp { layer } => {
                    self.u8(2);
                    self.usize(layer);
                }
                ComponentSelector::Residual { layer, stage } => {
                    self.u8(3);
                    self.usize(layer);
                    self.u8(match stage {
                        ResidualStage::Pre => 0,
                        ResidualStage::Mid => 1,
                        ResidualStage::Post => 2,
                    });
                }
            }
        }
    }
    fn dist(&mut self, d: &Distribution) {
        match d {
            Distribution::Dense { probs } => {
                self.u8(0);
                self.usize(probs.len());
                self.usize(probs.len());
                for &p in probs {
                    self.f32(p);
                }
            }
            Distribution::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                self.u8(1);
                self.u32(*vocab_size);
                self.usize(entries.len());
                for &(t, p) in entries {
                    self.u32(t);
                    self.f32(p);
                }
                self.f32(*tail_mass);
            }
        }
    }
}

/// Encode `msg` as a complete frame (length prefix included).
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut e = Enc(Vec::with_capacity(64));
    e.u32(0);
    e.0.extend_from_slice(MAGIC);
    e.u16(VERSION);
    e.u8(msg.kind());
    match msg {
        Message::Handshake(info) => {
            e.str(&info.model_name);
            for v in [
                info.layers,
                info.heads,
                info.d_model,
                info.vocab_size,
                info.max_context,
                info.max_parallelism,
            ] {
                e.usize(v);
            }
            e.u32(info.eos_token.unwrap_or(NO_EOS));
        }
        Message::ScoreRequest { id, request } => {
            e.u32(*id);
            e.toks(&request.prompt_tokens);
            e.toks(&request.response_tokens);
            e.selectors(&request.selectors);
            e.usize(request.masked_heads.len());
            for h in &request.masked_heads {
                e.usize(h.layer);
                e.usize(h.head);
            }
        }
        Message::ScoreResponse { id, response } => {
            e.u32(*id);
            e.selectors(&response.selectors);
            e.usize(response.positions);
            for d in &response.distributions {
                e.dist(d);
            }
        }
        Message::GenerateRequest { id, prompt, max_len } => {
            e.u32(*id);
            e.toks(prompt);
            e.u32(*max_len);
        }
        Message::GenerateResponse { id, generation } => {
            e.u32(*id);
            e.toks(&generation.tokens);
            e.usize(generation.distributions.len());
            for d in &generation.distributions {
                e.dist(d);
            }
        }
        Message::TokenizeRequest { id, text } | Message::DetokenizeResponse { id, text } => {
            e.u32(*id);
            e.str(text);
        }
        Message::TokenizeResponse { id, tokens }
        | Message::DetokenizeRequest { id, tokens }
        | Message::UnembedRequest { id, tokens } => {
            e.u32(*id);
            e.toks(tokens);
        }
        Message::UnembedResponse { id, vectors } => {
            e.u32(*id);
            e.usize(vectors.len());
            e.usize(vectors.first().map_or(0, Vec::len));
            for v in vectors {
                for &x in v {
                    e.f32(x);
                }
            }
        }
        Message::Error {
            id,
            code,
            a,
            b,
            message,
        } => {
            e.u32(*id);
            e.u8(*code as u8);
            e.u32(*a);
            e.u32(*b);
            e.str(message);
        }
    }
    let len = (e.0.len() - 4) as u32;
    e.0[..4].copy_from_slice(&len.to_le_bytes());
    e.0
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> BackendError {
    BackendError::Framing("truncated payload".into())
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> BackendResult<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let out = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> BackendResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> BackendResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> BackendResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> BackendResult<usize> {
        Ok(self.u32()? as usize)
    }
    fn f32(&mut self) -> BackendResult<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    /// A count of items at least `item_size` bytes each, checked against what is left.
    fn count(&mut self, item_size: usize) -> BackendResult<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_size) > self.buf.len() - self.pos {
            return Err(truncated());
        }
        Ok(n)
    }
    fn str(&mut self) -> BackendResult<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| BackendError::Protocol("invalid UTF-8 string".into()))
    }
    fn toks(&mut self) -> BackendResult<Vec<u32>> {
        let n = self.count(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn selectors(&mut self) -> BackendResult<Vec<ComponentSelector>> {
        let n = self.count(1)?;
        (0..n)
            .map(|_| {
                Ok(match self.u8()? {
                    0 => ComponentSelector::Final,
                    1 => ComponentSelector::AttnHead {
                        layer: self.usize()?,
                        head: self.usize()?,
                    },
                    2 => ComponentSelector::Mlp { layer: self.usize()? },
                    3 => ComponentSelector::Residual {
                        layer: self.usize()?,
                        stage: match self.u8()? {
                            0 => ResidualStage::Pre,
                            1 => ResidualStage::Mid,
                            2 => ResidualStage::Post,
                            s => return Err(BackendError::Protocol(format!("bad stage {s}"))),
                        },
                    },
                    t => return Err(BackendError::Protocol(format!("bad selector tag {t}"))),
                })
            })
            .collect()
    }
    fn dist(&mut self) -> BackendResult<Distribution> {
        let form = self.u8()?;
        let vocab_size = self.u32()?;
        match form {
            0 => {
                let n = self.count(4)?;
                if n != vocab_size as usize {
                    return Err(BackendError::Protocol(format!(
                        "dense distribution has {n} entries for vocabulary {vocab_size}"
                    )));
                }
                let probs = (0..n).map(|_| self.f32()).collect::<BackendResult<_>>()?;
                Ok(Distribution::Dense { probs })
            }
            1 => {
                let n = self.count(8)?;
                let entries = (0..n)
                    .map(|_| Ok((self.u32()?, self.f32()?)))
                    .collect::<BackendResult<_>>()?;
                Ok(Distribution::Sparse {
                    vocab_size,
                    entries,
                    tail_mass: self.f32()?,
                })
            }
            f => Err(BackendError::Protocol(format!("bad distribution form {f}"))),
        }
    }
    fn dists(&mut self, n: usize) -> BackendResult<Vec<Distribution>> {
        if n.saturating_mul(9) > self.buf.len() - self.pos {
            return Err(truncated());
        }
        (0..n).map(|_| self.dist()).collect()
    }
}

fn decode_payload(payload: &[u8]) -> BackendResult<Message> {
    let mut d = Dec { buf: payload, pos: 0 };
    let magic = d.take(4)?;
    if magic != MAGIC {
        return Err(BackendError::Protocol(format!("bad magic {magic:?}")));
    }
    let version = d.u16()?;
    if version != VERSION {
        return Err(BackendError::Protocol(format!("unsupported version {version}")));
    }
    let kind = d.u8()?;
    let msg = match kind {
        0x01 => {
            let model_name = d.str()?;
            let mut v = [0usize; 6];
            for slot in &mut v {
                *slot = d.usize()?;
            }
            let eos = d.u32()?;
            Message::Handshake(ModelInfo {
                model_name,
                layers: v[0],
                heads: v[1],
                d_model: v[2],
                vocab_size: v[3],
                max_context: v[4],
                max_parallelism: v[5],
                eos_token: (eos != NO_EOS).then_some(eos),
            })
        }
        0x02 => {
            let id = d.u32()?;
            let prompt_tokens = d.toks()?;
            let response_tokens = d.toks()?;
            let selectors = d.selectors()?;
            let n = d.count(8)?;
            let masked_heads = (0..n)
                .map(|_| Ok(HeadId::new(d.usize()?, d.usize()?)))
                .collect::<BackendResult<_>>()?;
            Message::ScoreRequest {
                id,
                request: ScoreRequest {
                    prompt_tokens,
                    response_tokens,
                    selectors,
                    masked_heads,
                },
            }
        }
        0x03 => {
            let id = d.u32()?;
            let selectors = d.selectors()?;
            let positions = d.usize()?;
            let distributions = d.dists(selectors.len().saturating_mul(positions))?;
            Message::ScoreResponse {
                id,
                response: ScoreResponse {
                    selectors,
                    positions,
                    distributions,
                },
            }
        }
        0x04 => Message::GenerateRequest {
            id: d.u32()?,
            prompt: d.toks()?,
            max_len: d.u32()?,
        },
        0x05 => {
            let id = d.u32()?;
            let tokens = d.toks()?;
            let n = d.usize()?;
            let distributions = d.dists(n)?;
            Message::GenerateResponse {
                id,
                generation: Generation {
                    tokens,
                    distributions,
                },
            }
        }
        0x06 => Message::TokenizeRequest {
            id: d.u32()?,
            text: d.str()?,
        },
        0x07 => Message::TokenizeResponse {
            id: d.u32()?,
            tokens: d.toks()?,
        },
        0x08 => Message::DetokenizeRequest {
            id: d.u32()?,
            tokens: d.toks()?,
        },
        0x09 => Message::DetokenizeResponse {
            id: d.u32()?,
            text: d.str()?,
        },
        0x0A => Message::UnembedRequest {
            id: d.u32()?,
            tokens: d.toks()?,
        },
        0x0B => {
            let id = d.u32()?;
            let n = d.usize()?;
            let dim = d.usize()?;
            if n.saturating_mul(dim).saturating_mul(4) > payload.len() - d.pos {
                return Err(truncated());
            }
            let vectors = (0..n)
                .map(|_| (0..dim).map(|_| d.f32()).collect::<BackendResult<Vec<f32>>>())
                .collect::<BackendResult<_>>()?;
            Message::UnembedResponse { id, vectors }
        }
        0x7F => {
            let id = d.u32()?;
            let code = match d.u8()? {
                1 => ErrorCode::Unsupported,
                2 => ErrorCode::ContextTooLong,
                3 => ErrorCode::InvalidRequest,
                4 => ErrorCode::Numerical,
                5 => ErrorCode::Failure,
                c => return Err(BackendError::Protocol(format!("bad error code {c}"))),
            };
            Message::Error {
                id,
                code,
                a: d.u32()?,
                b: d.u32()?,
                message: d.str()?,
            }
        }
        k => return Err(BackendError::Protocol(format!("unknown message kind {k:#04x}"))),
    };
    if d.pos != payload.len() {
        return Err(BackendError::Protocol(format!(
            "{} trailing bytes after message",
            payload.len() - d.pos
        )));
    }
    Ok(msg)
}

/// Decode one frame from the front of `bytes`, returning the message and the
/// number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> BackendResult<(Message, usize)> {
    let header: [u8; 4] = bytes
        .get(..4)
        .ok_or_else(|| BackendError::Framing("truncated length prefix".into()))?
        .try_into()
        .unwrap();
    let len = u32::from_le_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(BackendError::Framing(format!("frame of {len} bytes exceeds limit")));
    }
    let payload = bytes
        .get(4..4 + len)
        .ok_or_else(|| BackendError::Framing(format!("frame declares {len} bytes, {} available", bytes.len() - 4)))?;
    Ok((decode_payload(payload)?, 4 + len))
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// Read one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(r: &mut R) -> BackendResult<Option<Message>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(BackendError::Framing("truncated length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(BackendError::Framing(format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            BackendError::Framing(format!("stream ended inside a {len}-byte frame"))
        } else {
            e.into()
        }
    })?;
    decode_payload(&payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn selector() -> impl Strategy<Value = ComponentSelector> {
        prop_oneof![
            Just(ComponentSelector::Final),
            (0usize..64, 0usize..64).prop_map(|(layer, head)| ComponentSelector::AttnHead { layer, head }),
            (0usize..64).prop_map(|layer| ComponentSelector::Mlp { layer }),
            (0usize..64, prop::sample::select(ResidualStage::ALL.to_vec()))
                .prop_map(|(layer, stage)| ComponentSelector::Residual { layer, stage }),
        ]
    }

    fn distribution() -> impl Strategy<Value = Distribution> {
        prop_oneof![
            prop::collection::vec(0.0f32..1.0, 1..40).prop_map(|probs| Distribution::Dense { probs }),
            (prop::collection::btree_map(0u32..1000, 0.0f32..1.0, 1..20), 0.0f32..1.0).prop_map(
                |(m, tail_mass)| Distribution::Sparse {
                    vocab_size: 1000,
                    entries: m.into_iter().collect(),
                    tail_mass,
                }
            ),
        ]
    }

    fn message() -> impl Strategy<Value = Message> {
        let toks = || prop::collection::vec(any::<u32>(), 0..20);
        prop_oneof![
            (any::<u32>(), toks(), toks(), prop::collection::vec(selector(), 0..6),
             prop::collection::vec((0usize..8, 0usize..8), 0..4))
                .prop_map(|(id, p, r, s, m)| Message::ScoreRequest {
                    id,
                    request: ScoreRequest {
                        prompt_tokens: p,
                        response_tokens: r,
                        selectors: s,
                        masked_heads: m.into_iter().map(|(l, h)| HeadId::new(l, h)).collect(),
                    },
                }),
            (any::<u32>(), prop::collection::vec(selector(), 1..4), 0usize..4)
                .prop_flat_map(|(id, s, pos)| {
                    let n = s.len() * pos;
                    (Just(id), Just(s), Just(pos), prop::collection::vec(distribution(), n..=n))
                })
                .prop_map(|(id, selectors, positions, distributions)| Message::ScoreResponse {
                    id,
                    response: ScoreResponse { selectors, positions, distributions },
                }),
            (any::<u32>(), toks(), prop::collection::vec(distribution(), 0..4))
                .prop_map(|(id, tokens, distributions)| Message::GenerateResponse {
                    id,
                    generation: Generation { tokens, distributions },
                }),
            (any::<u32>(), ".{0,30}").prop_map(|(id, text)| Message::TokenizeRequest { id, text }),
            (any::<u32>(), 1usize..4, 0usize..6).prop_flat_map(|(id, n, d)| {
                (Just(id), prop::collection::vec(prop::collection::vec(-1.0f32..1.0, d..=d), n..=n))
            }).prop_map(|(id, vectors)| Message::UnembedResponse { id, vectors }),
        ]
    }

    proptest! {
        #[test]
        fn frame_round_trip(msg in message()) {
            let bytes = encode_frame(&msg);
            let (back, used) = decode_frame(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, msg);
        }

        #[test]
        fn truncation_is_a_framing_error(msg in message(), cut in 0usize..1000) {
            let bytes = encode_frame(&msg);
            let cut = cut % bytes.len();
            let err = decode_frame(&bytes[..cut]).unwrap_err();
            prop_assert!(matches!(err, BackendError::Framing(_)), "{err:?}");
        }
    }

    #[test]
    fn bad_magic_is_a_protocol_error() {
        let mut bytes = encode_frame(&Message::TokenizeRequest {
            id: 1,
            text: "x".into(),
        });
        bytes[4..8].copy_from_slice(b"XXXX");
        assert!(matches!(decode_frame(&bytes), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn bad_version_is_a_protocol_error() {
        let mut bytes = encode_frame(&Message::TokenizeRequest {
            id: 1,
            text: "x".into(),
        });
        bytes[8..10].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(decode_frame(&bytes), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn error_frames_map_back_to_errors() {
        let err = BackendError::ContextTooLong { len: 600, max: 512 };
        let msg = Message::from_error(3, &err);
        let (back, _) = decode_frame(&encode_frame(&msg)).unwrap();
        assert!(matches!(
            back.to_error(),
            Some(BackendError::ContextTooLong { len: 600, max: 512 })
        ));
    }

    #[test]
    fn stream_reader_handles_eof() {
        let bytes = encode_frame(&Message::TokenizeResponse {
            id: 9,
            tokens: vec![1, 2],
        });
        let mut r = io::Cursor::new(bytes.clone());
        assert!(read_frame(&mut r).unwrap().is_some());
        assert!(read_frame(&mut r).unwrap().is_none());
        let mut short = io::Cursor::new(bytes[..bytes.len() - 1].to_vec());
        assert!(matches!(read_frame(&mut short), Err(BackendError::Framing(_))));
    }
}
