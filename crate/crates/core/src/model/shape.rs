use crate::{Error, Result};

/// Spatial output size of a convolution: `⌊(n + 2p − f) / s⌋ + 1`.
///
/// Fails when the filter does not fit in the padded input.
pub fn conv_output_size(n: usize, padding: usize, filter: usize, stride: usize) -> Result<usize> {
    if n < 1 || filter < 1 || stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "conv_output_size needs n, f, s ≥ 1 (n={n}, f={filter}, s={stride})"
        )));
    }
    let padded = n + 2 * padding;
    if filter > padded {
        return Err(Error::InvalidArgument(format!(
            "filter {filter} larger than padded input {padded}"
        )));
    }
    Ok((padded - filter) / stride + 1)
}
