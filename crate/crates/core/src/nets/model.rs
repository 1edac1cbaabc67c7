use std::path::Path;

use super::arch::{
    argmax_labels, depth_forward, init_params, pose_forward, segnet_forward, ArchitectureDescriptor, DepthOutput,
    NUM_CLASSES,
};
use super::params::{load_checkpoint, save_checkpoint, NetworkParams};
use crate::error::{Error, Result};
use crate::losses::one_hot;
use crate::tensor::Tensor;

/// The five networks trained together, in checkpoint order.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub translator: NetworkParams,
    pub discriminator: NetworkParams,
    pub segnet: NetworkParams,
    pub depth: NetworkParams,
    pub pose: NetworkParams,
}

impl ModelSet {
    pub fn init(seed: u64, semantic_augmentation: bool) -> Result<Self> {
        Ok(Self {
            translator: init_params(&ArchitectureDescriptor::translator(), seed)?,
            discriminator: init_params(&ArchitectureDescriptor::discriminator(), seed)?,
            segnet: init_params(&ArchitectureDescriptor::segnet(), seed)?,
            depth: init_params(&ArchitectureDescriptor::depth(semantic_augmentation), seed)?,
            pose: init_params(&ArchitectureDescriptor::pose(), seed)?,
        })
    }

    pub fn networks(&self) -> [&NetworkParams; 5] {
        [&self.translator, &self.discriminator, &self.segnet, &self.depth, &self.pose]
    }

    pub fn semantic_augmentation(&self) -> bool {
        self.depth
            .get("e1.w")
            .map(|w| w.shape()[1] == 3 + NUM_CLASSES)
            .unwrap_or(false)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.networks())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut nets = load_checkpoint(path)?;
        let mut take = |name: &str| -> Result<NetworkParams> {
            let i = nets
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks network `{name}`")))?;
            Ok(nets.remove(i))
        };
        Ok(Self {
            translator: take("translator")?,
            discriminator: take("discriminator")?,
            segnet: take("segnet")?,
            depth: take("depth")?,
            pose: take("pose")?,
        })
    }

    pub fn bit_eq(&self, other: &ModelSet) -> bool {
        self.networks().iter().zip(other.networks()).all(|(a, b)| a.bit_eq(b))
    }

    /// Untracked one-hot semantics of `image` from the segmentation network.
    pub fn predicted_semantics(&self, image: &Tensor) -> Result<Tensor> {
        let [n, _, h, w] = match *image.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::domain("predicted_semantics", "expects NCHW")),
        };
        let labels = argmax_labels(&segnet_forward(&self.segnet.detach(), &image.detach())?)?;
        one_hot(&labels, n, NUM_CLASSES, h, w)
    }

    /// Depth from the given (possibly tape-bound) depth parameters, adding
    /// semantic planes when the network expects them.
    pub fn depth_with(&self, depth: &NetworkParams, image: &Tensor, semantics: Option<&Tensor>) -> Result<DepthOutput> {
        if !self.semantic_augmentation() {
            return depth_forward(depth, image, None);
        }
        match semantics {
            Some(s) => depth_forward(depth, image, Some(s)),
            None => depth_forward(depth, image, Some(&self.predicted_semantics(image)?)),
        }
    }

    /// Untracked depth prediction `[N, 1, H, W]`.
    pub fn predict_depth(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.depth_with(&self.depth.detach(), &image.detach(), None)?.depth)
    }

    /// Untracked pose parameters `[N, 6]` of camera `a` → camera `b`.
    pub fn predict_pose(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        pose_forward(&self.pose.detach(), &[&a.detach(), &b.detach()])
    }
}
