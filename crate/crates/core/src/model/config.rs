use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of axial contrasts: FLAIR, ADC, Trace, T2w, GRE, SWI.
pub const AXIAL_MODALITIES: usize = 6;
/// Number of sagittal contrasts: T1w.
pub const SAGITTAL_MODALITIES: usize = 1;

/// Which plane branches the network has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    /// Axial and sagittal encoders joined by cross-attention fusion.
    Dual,
    /// Single axial encoder, the conventional single-plane ViT arrangement.
    AxialOnly,
}

/// Named configurations: the three published MP-ViT sizes at full
/// resolution plus a small one for desk-scale experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tiny,
    Small,
    Base,
    DeskTiny,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tiny, Variant::Small, Variant::Base, Variant::DeskTiny];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::Small => "small",
            Variant::Base => "base",
            Variant::DeskTiny => "desk-tiny",
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Variant::Tiny => ModelConfig::full_scale(192, 3),
            Variant::Small => ModelConfig::full_scale(384, 6),
            Variant::Base => ModelConfig::full_scale(768, 12),
            Variant::DeskTiny => ModelConfig::desk_tiny(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected tiny, small, base or desk-tiny)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// (H, W, D) in voxels.
    pub axial_grid: [usize; 3],
    pub sagittal_grid: [usize; 3],
    /// Patch side length in voxels.
    pub patch: usize,
    pub axial_channels: usize,
    pub sagittal_channels: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Heads in the cross-branch fusion attention.
    pub fusion_heads: usize,
    /// Encoder blocks per branch.
    pub depth: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub layer_norm_eps: f64,
    /// Accepted for configuration compatibility; only 0.0 is supported.
    pub dropout: f64,
    /// Whether the modality-indicator cross-attention module is present.
    pub modality_vector: bool,
    pub branches: Branches,
}

impl ModelConfig {
    fn full_scale(embed_dim: usize, num_heads: usize) -> Self {
        ModelConfig {
            axial_grid: [256, 256, 32],
            sagittal_grid: [256, 32, 256],
            patch: 16,
            axial_channels: AXIAL_MODALITIES,
            sagittal_channels: SAGITTAL_MODALITIES,
            embed_dim,
            num_heads,
            fusion_heads: num_heads,
            depth: 12,
            mlp_ratio: 4.0,
            num_classes: 2,
            layer_norm_eps: 1e-6,
            dropout: 0.0,
            modality_vector: true,
            branches: Branches::Dual,
        }
    }

    pub fn desk_tiny() -> Self {
        ModelConfig {
            axial_grid: [32, 32, 16],
            sagittal_grid: [32, 16, 32],
            patch: 8,
            depth: 4,
            ..Self::full_scale(192, 3)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (grid, _) in self.grids() {
            for (axis, &len) in ['H', 'W', 'D'].iter().zip(grid.iter()) {
                if len == 0 || self.patch == 0 || len % self.patch != 0 {
                    return Err(Error::PatchGrid {
                        axis: *axis,
                        len,
                        patch: self.patch,
                    });
                }
            }
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.fusion_heads == 0 || self.embed_dim % self.fusion_heads != 0 {
            return Err(Error::invalid(format!(
                "embed_dim {} is not divisible by fusion_heads {}",
                self.embed_dim, self.fusion_heads
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::invalid("only binary classification (num_classes = 2) is supported"));
        }
        if self.axial_channels == 0 || self.sagittal_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(Error::invalid(format!("mlp_ratio {} too small", self.mlp_ratio)));
        }
        if self.dropout != 0.0 {
            return Err(Error::invalid("dropout is not supported; set it to 0.0"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid("layer_norm_eps must be > 0"));
        }
        Ok(())
    }

    fn grids(&self) -> Vec<([usize; 3], usize)> {
        match self.branches {
            Branches::Dual => vec![
                (self.axial_grid, self.axial_channels),
                (self.sagittal_grid, self.sagittal_channels),
            ],
            Branches::AxialOnly => vec![(self.axial_grid, self.axial_channels)],
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn has_sagittal(&self) -> bool {
        self.branches == Branches::Dual
    }

    pub fn branch_grid(&self, plane: Plane) -> [usize; 3] {
        match plane {
            Plane::Axial => self.axial_grid,
            Plane::Sagittal => self.sagittal_grid,
        }
    }

    pub fn branch_channels(&self, plane: Plane) -> usize {
        match plane {
            Plane::Axial => self.axial_channels,
            Plane::Sagittal => self.sagittal_channels,
        }
    }

    /// Modality slots of a branch (length of its indicator vector).
    pub fn branch_modalities(&self, plane: Plane) -> usize {
        self.branch_channels(plane)
    }

    /// Patch count `N = H·W·D / P³` of a branch.
    pub fn num_patches(&self, plane: Plane) -> usize {
        let [h, w, d] = self.branch_grid(plane);
        h * w * d / self.patch.pow(3)
    }

    /// Sequence length including the CLS token.
    pub fn seq_len(&self, plane: Plane) -> usize {
        self.num_patches(plane) + 1
    }

    /// Flattened patch width `P³·C`.
    pub fn patch_dim(&self, plane: Plane) -> usize {
        self.patch.pow(3) * self.branch_channels(plane)
    }

    /// Serializes as `key=value` lines readable by [`ModelConfig::set`].
    pub fn to_kv(&self) -> String {
        let grid = |g: [usize; 3]| format!("{}x{}x{}", g[0], g[1], g[2]);
        let branches = match self.branches {
            Branches::Dual => "dual",
            Branches::AxialOnly => "axial-only",
        };
        format!(
            "axial_grid={}\nsagittal_grid={}\npatch={}\naxial_channels={}\nsagittal_channels={}\n\
             embed_dim={}\nnum_heads={}\nfusion_heads={}\ndepth={}\nmlp_ratio={}\nlayer_norm_eps={}\n\
             dropout={}\nmodality_vector={}\nbranches={}\n",
            grid(self.axial_grid),
            grid(self.sagittal_grid),
            self.patch,
            self.axial_channels,
            self.sagittal_channels,
            self.embed_dim,
            self.num_heads,
            self.fusion_heads,
            self.depth,
            self.mlp_ratio,
            self.layer_norm_eps,
            self.dropout,
            self.modality_vector,
            branches,
        )
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys that
    /// are not model settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
        }
        fn grid(key: &str, value: &str) -> Result<[usize; 3]> {
            let parts: Vec<usize> = value
                .split('x')
                .map(|p| num(key, p))
                .collect::<Result<_>>()?;
            parts
                .try_into()
                .map_err(|_| Error::invalid(format!("`{key}` must look like HxWxD, got `{value}`")))
        }
        match key {
            "axial_grid" => self.axial_grid = grid(key, value)?,
            "sagittal_grid" => self.sagittal_grid = grid(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "axial_channels" => self.axial_channels = num(key, value)?,
            "sagittal_channels" => self.sagittal_channels = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "fusion_heads" => self.fusion_heads = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "modality_vector" => self.modality_vector = num(key, value)?,
            "branches" => {
                self.branches = match value.trim() {
                    "dual" => Branches::Dual,
                    "axial-only" => Branches::AxialOnly,
                    other => return Err(Error::invalid(format!("unknown branches `{other}`"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses the output of [`ModelConfig::to_kv`], starting from `desk-tiny`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk_tiny();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got `{line}`")))?;
            if !cfg.set(k.trim(), v)? {
                return Err(Error::invalid(format!("unknown model key `{}`", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn planes(&self) -> &'static [Plane] {
        match self.branches {
            Branches::Dual => &[Plane::Axial, Plane::Sagittal],
            Branches::AxialOnly => &[Plane::Axial],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Plane {
    Axial,
    Sagittal,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
        }
    }

    pub fn other(self) -> Plane {
        match self {
            Plane::Axial => Plane::Sagittal,
            Plane::Sagittal => Plane::Axial,
        }
    }
}
