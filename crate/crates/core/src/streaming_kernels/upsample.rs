use super::KernelError;
use crate::frames::Frames;
use crate::scalar::Scalar;

/// Nearest-frame repetition: every input frame is repeated `factor` times.
/// Stateless, so chunk-wise application equals the full pass exactly.
pub fn upsample_step<T: Scalar>(chunk: &Frames<T>, factor: usize) -> Result<Frames<T>, KernelError> {
    if factor < 1 {
        return Err(KernelError::BadFactor);
    }
    let mut out = Frames::new(chunk.dim());
    for row in chunk.rows() {
        for _ in 0..factor {
            out.push(row);
        }
    }
    Ok(out)
}
