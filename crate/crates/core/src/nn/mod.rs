//! Segmentation network and the shared-weight two-branch forward contract.

mod ops;
mod params;
mod unet;

use core::sync::atomic::{AtomicUsize, Ordering};

pub use params::{ParamSpec, ParamStore};
pub use unet::{Trace, UNet, UNetConfig};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LogitsMap, Scalar};

/// Anything that maps an image to per-pixel class logits.
pub trait SegmentationModel<T: Scalar> {
    fn num_classes(&self) -> usize;
    fn forward(&self, image: &ImageTensor) -> Result<LogitsMap<T>>;
    fn parameter_count(&self) -> usize;
}

impl<T: Scalar, M: SegmentationModel<T> + ?Sized> SegmentationModel<T> for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn forward(&self, image: &ImageTensor) -> Result<LogitsMap<T>> {
        (**self).forward(image)
    }
    fn parameter_count(&self) -> usize {
        (**self).parameter_count()
    }
}

/// Total number of scalar trainable parameters.
pub fn parameter_count<T: Scalar, M: SegmentationModel<T> + ?Sized>(model: &M) -> usize {
    model.parameter_count()
}

/// Build the reference U-Net for RGB input.
pub fn build_reference_unet<T: Scalar>(
    num_classes: usize,
    base_width: usize,
    depth: usize,
    seed: u64,
) -> Result<UNet<T>> {
    if depth < 2 || base_width < 4 {
        return Err(Error::InvalidConfig(alloc::format!(
            "reference U-Net needs depth >= 2 and base_width >= 4 (got {depth}, {base_width})"
        )));
    }
    UNet::new(UNetConfig { num_classes, base_width, depth, ..UNetConfig::default() }, seed)
}

/// Training wrapper: both branches run through the single wrapped backbone.
#[derive(Debug, Clone)]
pub struct SiameseNet<T> {
    backbone: UNet<T>,
}

/// Outputs and traces of one two-branch training forward pass.
pub struct SiamesePass<T> {
    pub clean: LogitsMap<T>,
    pub masked: LogitsMap<T>,
    pub clean_trace: Trace<T>,
    pub masked_trace: Trace<T>,
}

impl<T: Scalar> SiameseNet<T> {
    pub fn new(backbone: UNet<T>) -> Self {
        Self { backbone }
    }

    pub fn backbone(&self) -> &UNet<T> {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut UNet<T> {
        &mut self.backbone
    }

    pub fn into_backbone(self) -> UNet<T> {
        self.backbone
    }

    /// `(M_p, M_pm)`: logits of the clean and the masked image.
    pub fn siamese_forward(
        &self,
        image: &ImageTensor,
        masked_image: &ImageTensor,
    ) -> Result<(LogitsMap<T>, LogitsMap<T>)> {
        self.forward_pair(image, masked_image).map(|p| (p.clean, p.masked))
    }

    pub fn forward_pair(&self, image: &ImageTensor, masked_image: &ImageTensor) -> Result<SiamesePass<T>> {
        if image.dims() != masked_image.dims() {
            return Err(Error::ShapeMismatch {
                context: "siamese_forward",
                expected: image.dims(),
                found: masked_image.dims(),
            });
        }
        let (clean, clean_trace) = self.backbone.forward_train(image)?;
        let (masked, masked_trace) = self.backbone.forward_train(masked_image)?;
        Ok(SiamesePass { clean, masked, clean_trace, masked_trace })
    }

    /// Accumulates gradients from both branches into the one shared buffer.
    pub fn backward_pair(&self, pass: &SiamesePass<T>, dclean: &[T], dmasked: &[T], grads: &mut [T]) {
        self.backbone.backward(&pass.clean_trace, dclean, grads);
        self.backbone.backward(&pass.masked_trace, dmasked, grads);
    }
}

impl<T: Scalar> SegmentationModel<T> for SiameseNet<T> {
    fn num_classes(&self) -> usize {
        self.backbone.num_classes()
    }
    fn forward(&self, image: &ImageTensor) -> Result<LogitsMap<T>> {
        self.backbone.forward(image)
    }
    fn parameter_count(&self) -> usize {
        self.backbone.parameter_count()
    }
}

/// Free-function form of [`SiameseNet::siamese_forward`] over a bare backbone.
pub fn siamese_forward<T: Scalar>(
    net: &UNet<T>,
    image: &ImageTensor,
    masked_image: &ImageTensor,
) -> Result<(LogitsMap<T>, LogitsMap<T>)> {
    if image.dims() != masked_image.dims() {
        return Err(Error::ShapeMismatch {
            context: "siamese_forward",
            expected: image.dims(),
            found: masked_image.dims(),
        });
    }
    Ok((net.forward(image)?, net.forward(masked_image)?))
}

/// Counts forward passes through the wrapped model.
#[derive(Debug)]
pub struct Instrumented<M> {
    inner: M,
    forwards: AtomicUsize,
}

impl<M> Instrumented<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, forwards: AtomicUsize::new(0) }
    }

    pub fn forward_calls(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<T: Scalar, M: SegmentationModel<T>> SegmentationModel<T> for Instrumented<M> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn forward(&self, image: &ImageTensor) -> Result<LogitsMap<T>> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.inner.forward(image)
    }
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }
}
