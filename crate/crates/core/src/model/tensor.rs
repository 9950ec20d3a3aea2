/// Dense activation tensor in frame-major `[T, C, H, W]` layout (batch of one).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> Self {
        Self { t, c, h, w, data: vec![0.0; t * c * h * w] }
    }

    pub fn from_vec(t: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), t * c * h * w, "tensor data does not match shape");
        Self { t, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, self.c, self.h, self.w]
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, h: usize, w: usize) -> usize {
        ((t * self.c + c) * self.h + h) * self.w + w
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }
}
