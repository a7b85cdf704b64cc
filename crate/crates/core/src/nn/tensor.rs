use super::Scalar;

/// Activation tensor in channel-major `C x N x H x W` layout.
///
/// Keeping channels outermost turns every convolution over the whole batch
/// into a single GEMM and makes channel concatenation a buffer append.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            batch,
            height,
            width,
            data: vec![T::ZERO; channels * batch * height * width],
        }
    }

    pub fn from_data(channels: usize, batch: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * batch * height * width, "tensor data length");
        Tensor {
            channels,
            batch,
            height,
            width,
            data,
        }
    }

    /// `N * H * W`, the column count of the channel-major matrix view.
    #[inline]
    pub fn spatial(&self) -> usize {
        self.batch * self.height * self.width
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    /// Contiguous `N x H x W` block of channel `c`.
    pub fn channel(&self, c: usize) -> &[T] {
        let s = self.spatial();
        &self.data[c * s..(c + 1) * s]
    }

    /// One `H x W` plane.
    pub fn image(&self, c: usize, b: usize) -> &[T] {
        let p = self.plane();
        let start = (c * self.batch + b) * p;
        &self.data[start..start + p]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(
            (self.batch, self.height, self.width),
            (other.batch, other.height, other.width),
            "concat: spatial mismatch"
        );
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::from_data(
            self.channels + other.channels,
            self.batch,
            self.height,
            self.width,
            data,
        )
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): splits off the
    /// first `channels` channels.
    pub fn split_channels(self, channels: usize) -> (Tensor<T>, Tensor<T>) {
        assert!(channels <= self.channels);
        let s = self.spatial();
        let mut head = self.data;
        let tail = head.split_off(channels * s);
        (
            Tensor::from_data(channels, self.batch, self.height, self.width, head),
            Tensor::from_data(self.channels - channels, self.batch, self.height, self.width, tail),
        )
    }
}
