//! ECHO video files: 8-byte magic `ECHOv001`, little-endian u32 frame count,
//! height and width, then frame-major row-major little-endian f32 values in
//! [0, 1]. Write → read → write is bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::tensor::{Shape, Tensor};
use crate::video::VideoClip;

pub const ECHO_MAGIC: &[u8; 8] = b"ECHOv001";

pub fn encode_video(video: &VideoClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + video.data().numel() * 4);
    out.extend_from_slice(ECHO_MAGIC);
    out.extend_from_slice(&(video.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(video.height() as u32).to_le_bytes());
    out.extend_from_slice(&(video.width() as u32).to_le_bytes());
    for &v in video.data().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_video(bytes: &[u8]) -> Result<VideoClip> {
    if bytes.len() < 20 || &bytes[..8] != ECHO_MAGIC {
        return Err(Error::format("ECHO", "missing or wrong magic"));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let frames = read_u32(8) as usize;
    let height = read_u32(12) as usize;
    let width = read_u32(16) as usize;
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::format("ECHO", "zero extent in header"));
    }
    let expected = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("ECHO", "header extents overflow"))?;
    if bytes.len() - 20 != expected {
        return Err(Error::format(
            "ECHO",
            format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len() - 20
            ),
        ));
    }
    let data: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(Error::format("ECHO", "values outside [0, 1]"));
    }
    VideoClip::new(
        Tensor::from_vec(Shape::new(vec![frames, height, width])?, data)?,
        None,
    )
}

pub fn write_video(path: &Path, video: &VideoClip) -> Result<()> {
    video.data().check_finite("ECHO video")?;
    atomic_write(path, &encode_video(video))
}

pub fn read_video(path: &Path) -> Result<VideoClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_video(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_video() -> VideoClip {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32) / 24.0).collect();
        VideoClip::new(
            Tensor::from_vec(Shape::new(vec![2, 3, 4]).unwrap(), data).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let video = sample_video();
        let bytes = encode_video(&video);
        let decoded = decode_video(&bytes).unwrap();
        assert_eq!(encode_video(&decoded), bytes);
        assert_eq!(decoded.data(), video.data());
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let mut bytes = encode_video(&sample_video());
        assert!(decode_video(&bytes[..bytes.len() - 1]).is_err());
        bytes[3] = b'X';
        assert!(decode_video(&bytes).is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let mut bytes = encode_video(&sample_video());
        bytes[20..24].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(decode_video(&bytes).is_err());
    }
}
