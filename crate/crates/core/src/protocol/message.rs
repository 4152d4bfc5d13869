//! Length-prefixed wire frames.
//!
//! Frame: length u32 BE (covering type + payload) | type u8 | payload.
//! Weight payloads are opaque bytes: a cipher envelope on the server-aided
//! path, a weight blob between peers.

use std::io::{Read, Write};

use super::ProtocolError;

/// Upper bound on a frame body; anything larger is a protocol error rather
/// than an allocation.
pub const MAX_FRAME: usize = 1 << 30;

const T_HELLO: u8 = 1;
const T_PUT_WEIGHTS: u8 = 2;
const T_GET_WEIGHTS: u8 = 3;
const T_WEIGHTS: u8 = 4;
const T_TOKEN_GRANT: u8 = 5;
const T_TOKEN_RELEASE: u8 = 6;
const T_ACK: u8 = 7;
const T_ERROR: u8 = 8;

/// Error codes carried by `Message::Error`.
pub mod error_code {
    pub const PROTOCOL: u16 = 1;
    pub const DUPLICATE_ID: u16 = 2;
    pub const NO_TOKEN: u16 = 3;
    pub const REJECTED: u16 = 4;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Hello { trainer_id: u32 },
    PutWeights(Vec<u8>),
    GetWeights,
    Weights(Vec<u8>),
    TokenGrant { round: u32, central_epoch: u32 },
    TokenRelease,
    Ack,
    Error { code: u16, text: String },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::PutWeights(_) => "PUT_WEIGHTS",
            Message::GetWeights => "GET_WEIGHTS",
            Message::Weights(_) => "WEIGHTS",
            Message::TokenGrant { .. } => "TOKEN_GRANT",
            Message::TokenRelease => "TOKEN_RELEASE",
            Message::Ack => "ACK",
            Message::Error { .. } => "ERROR",
        }
    }

    /// Serializes type byte + payload (without the length prefix).
    fn body(&self) -> Vec<u8> {
        match self {
            Message::Hello { trainer_id } => {
                let mut b = vec![T_HELLO];
                b.extend_from_slice(&trainer_id.to_be_bytes());
                b
            }
            Message::PutWeights(bytes) => {
                let mut b = Vec::with_capacity(1 + bytes.len());
                b.push(T_PUT_WEIGHTS);
                b.extend_from_slice(bytes);
                b
            }
            Message::GetWeights => vec![T_GET_WEIGHTS],
            Message::Weights(bytes) => {
                let mut b = Vec::with_capacity(1 + bytes.len());
                b.push(T_WEIGHTS);
                b.extend_from_slice(bytes);
                b
            }
            Message::TokenGrant { round, central_epoch } => {
                let mut b = vec![T_TOKEN_GRANT];
                b.extend_from_slice(&round.to_be_bytes());
                b.extend_from_slice(&central_epoch.to_be_bytes());
                b
            }
            Message::TokenRelease => vec![T_TOKEN_RELEASE],
            Message::Ack => vec![T_ACK],
            Message::Error { code, text } => {
                let mut b = vec![T_ERROR];
                b.extend_from_slice(&code.to_be_bytes());
                b.extend_from_slice(text.as_bytes());
                b
            }
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Parses a frame body (type byte + payload).
    pub fn decode(body: &[u8]) -> Result<Message, ProtocolError> {
        let (&tag, payload) = body.split_first().ok_or(ProtocolError::EmptyFrame)?;
        let need = |n: usize| -> Result<(), ProtocolError> {
            if payload.len() == n {
                Ok(())
            } else {
                Err(ProtocolError::MalformedMessage {
                    kind: tag,
                    reason: format!("payload length {}, expected {n}", payload.len()),
                })
            }
        };
        match tag {
            T_HELLO => {
                need(4)?;
                Ok(Message::Hello { trainer_id: u32::from_be_bytes(payload.try_into().unwrap()) })
            }
            T_PUT_WEIGHTS => Ok(Message::PutWeights(payload.to_vec())),
            T_GET_WEIGHTS => {
                need(0)?;
                Ok(Message::GetWeights)
            }
            T_WEIGHTS => Ok(Message::Weights(payload.to_vec())),
            T_TOKEN_GRANT => {
                need(8)?;
                Ok(Message::TokenGrant {
                    round: u32::from_be_bytes(payload[..4].try_into().unwrap()),
                    central_epoch: u32::from_be_bytes(payload[4..].try_into().unwrap()),
                })
            }
            T_TOKEN_RELEASE => {
                need(0)?;
                Ok(Message::TokenRelease)
            }
            T_ACK => {
                need(0)?;
                Ok(Message::Ack)
            }
            T_ERROR => {
                if payload.len() < 2 {
                    return Err(ProtocolError::MalformedMessage {
                        kind: tag,
                        reason: "error payload shorter than its code".into(),
                    });
                }
                Ok(Message::Error {
                    code: u16::from_be_bytes(payload[..2].try_into().unwrap()),
                    text: String::from_utf8_lossy(&payload[2..]).into_owned(),
                })
            }
            other => Err(ProtocolError::UnknownMessageType(other)),
        }
    }
}

/// Writes one frame.
pub fn write_frame(w: &mut impl Write, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on clean EOF at a frame boundary.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(ProtocolError::Io(e)),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    if len > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Message::decode(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: Message) {
        let frame = msg.encode();
        let mut cursor = std::io::Cursor::new(frame);
        let back = read_frame(&mut cursor).unwrap().unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn all_message_kinds_roundtrip() {
        roundtrip(Message::Hello { trainer_id: 17 });
        roundtrip(Message::PutWeights(vec![1, 2, 3, 250]));
        roundtrip(Message::GetWeights);
        roundtrip(Message::Weights(vec![]));
        roundtrip(Message::TokenGrant { round: 9, central_epoch: 2 });
        roundtrip(Message::TokenRelease);
        roundtrip(Message::Ack);
        roundtrip(Message::Error { code: 3, text: "no token".into() });
    }

    #[test]
    fn length_prefix_covers_type_and_payload() {
        let frame = Message::Hello { trainer_id: 1 }.encode();
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap());
        assert_eq!(len as usize, frame.len() - 4);
        assert_eq!(len, 5); // type byte + u32 id
    }

    #[test]
    fn unknown_type_rejected() {
        assert!(matches!(
            Message::decode(&[99, 0, 0]),
            Err(ProtocolError::UnknownMessageType(99))
        ));
    }

    #[test]
    fn clean_eof_yields_none_and_midframe_eof_errors() {
        let mut empty = std::io::Cursor::new(Vec::<u8>::new());
        assert!(read_frame(&mut empty).unwrap().is_none());
        let mut truncated = std::io::Cursor::new(vec![0, 0, 0, 9, 1]);
        assert!(read_frame(&mut truncated).is_err());
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut huge = std::io::Cursor::new(((MAX_FRAME + 1) as u32).to_be_bytes().to_vec());
        assert!(matches!(read_frame(&mut huge), Err(ProtocolError::FrameTooLarge(_))));
    }
}
