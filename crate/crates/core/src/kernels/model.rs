use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::folding::{folding_densify, FoldingConfig, FoldingParams};
use super::grid::{gridding, gridding_reverse, DenseGrid, GridNorm};
use super::layers::{bn_act, max_pool2, Activation, BatchNorm, Conv3d, ConvTranspose3d, Mlp, ProceduralLinear};
use super::sampling::{cubic_feature_len, cubic_feature_sampling, sample_coarse};
use super::tensor::FeatureMap;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Layer sizes of the completion network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgcArch {
    /// Vertices per axis of the input lattice; divisible by 16.
    pub grid: usize,
    pub channels: [usize; 4],
    pub fc_hidden: usize,
    pub global: usize,
    pub mlp: [usize; 3],
    pub coarse: usize,
    pub fold_hidden: usize,
    pub folding: FoldingConfig,
    pub norm: GridNorm,
}

impl Default for SgcArch {
    fn default() -> Self {
        SgcArch::full()
    }
}

impl SgcArch {
    pub fn full() -> SgcArch {
        SgcArch {
            grid: 80,
            channels: [40, 80, 160, 320],
            fc_hidden: 8000,
            global: 4000,
            mlp: [560, 560, 280],
            coarse: 3072,
            fold_hidden: 128,
            folding: FoldingConfig::default(),
            norm: GridNorm::Sum,
        }
    }

    /// Same graph at toy sizes, for fast tests.
    pub fn tiny() -> SgcArch {
        SgcArch {
            grid: 16,
            channels: [4, 6, 8, 10],
            fc_hidden: 24,
            global: 12,
            mlp: [16, 16, 8],
            coarse: 64,
            fold_hidden: 8,
            folding: FoldingConfig::default(),
            norm: GridNorm::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 16 || self.grid % 16 != 0 {
            return Err(Error::invalid(format!("grid resolution {} must be a positive multiple of 16", self.grid)));
        }
        if self.channels.contains(&0) || self.mlp.contains(&0) || self.fc_hidden == 0 || self.global == 0 || self.coarse == 0 || self.fold_hidden == 0 || self.folding.u == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    /// Encoder resolutions after each pooled stage.
    pub fn encoder_resolutions(&self) -> [usize; 4] {
        [self.grid / 2, self.grid / 4, self.grid / 8, self.grid / 16]
    }

    pub fn flat_len(&self) -> usize {
        let b = self.grid / 16;
        b * b * b * self.channels[3]
    }

    pub fn cubic_len(&self) -> usize {
        8 * (self.channels[2] + self.channels[1] + self.channels[0])
    }

    pub fn output_count(&self) -> usize {
        self.coarse * self.folding.ratio()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgcParams {
    pub arch: SgcArch,
    pub enc: Vec<Conv3d>,
    pub enc_bn: Vec<BatchNorm>,
    pub fc_enc: [ProceduralLinear; 2],
    pub fc_dec: [ProceduralLinear; 2],
    pub dec: Vec<ConvTranspose3d>,
    pub dec_bn: Vec<BatchNorm>,
    pub mlps: Mlp,
    pub folding: FoldingParams,
}

impl SgcParams {
    /// Random initialization, reproducible from the seed.
    pub fn init(arch: SgcArch, seed: u64) -> Result<SgcParams> {
        arch.validate()?;
        let root = SeededRng::new(seed).derive("sgc");
        let ch = arch.channels;
        let enc_in = [1, ch[0], ch[1], ch[2]];
        let dec_out = [ch[2], ch[1], ch[0], 1];
        let dec_in = [ch[3], ch[2], ch[1], ch[0]];
        let enc = (0..4)
            .map(|l| Conv3d::init(enc_in[l], ch[l], 4, 2, &mut root.derive(format!("conv{l}"))))
            .collect();
        let dec = (0..4)
            .map(|l| ConvTranspose3d::init(dec_in[l], dec_out[l], 4, 2, 1, &mut root.derive(format!("dconv{l}"))))
            .collect();
        let flat = arch.flat_len();
        Ok(SgcParams {
            arch,
            enc,
            enc_bn: ch.iter().map(|&c| BatchNorm::identity(c)).collect(),
            fc_enc: [
                ProceduralLinear::init(flat, arch.fc_hidden, &mut root.derive("fc_enc0")),
                ProceduralLinear::init(arch.fc_hidden, arch.global, &mut root.derive("fc_enc1")),
            ],
            fc_dec: [
                ProceduralLinear::init(arch.global, arch.fc_hidden, &mut root.derive("fc_dec0")),
                ProceduralLinear::init(arch.fc_hidden, flat, &mut root.derive("fc_dec1")),
            ],
            dec,
            dec_bn: dec_out.iter().map(|&c| BatchNorm::identity(c)).collect(),
            mlps: Mlp::init(
                &[arch.cubic_len(), arch.mlp[0], arch.mlp[1], arch.mlp[2]],
                Activation::Gelu,
                Activation::Gelu,
                false,
                &mut root.derive("mlps"),
            ),
            folding: FoldingParams::init(arch.mlp[2], arch.fold_hidden, &root.derive("folding")),
        })
    }

    /// Zeroes the decoder fully connected and transposed-convolution layers.
    pub fn zero_decoder(&mut self) {
        for fc in &mut self.fc_dec {
            fc.scale = 0.0;
            fc.bias.fill(0.0);
        }
        for d in &mut self.dec {
            d.weight.fill(0.0);
            d.bias.fill(0.0);
        }
    }

    pub fn zero_folding(&mut self) {
        self.folding.zero();
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, &Vec<f64>)> {
        let mut t: Vec<(String, Vec<usize>, &Vec<f64>)> = Vec::new();
        for (l, c) in self.enc.iter().enumerate() {
            t.push((format!("conv{l}.weight"), vec![64, c.in_c, c.out_c], &c.weight));
            t.push((format!("conv{l}.bias"), vec![c.out_c], &c.bias));
        }
        for (name, bns) in [("conv", &self.enc_bn), ("dconv", &self.dec_bn)] {
            for (l, bn) in bns.iter().enumerate() {
                let c = bn.channels();
                t.push((format!("{name}{l}.bn.gamma"), vec![c], &bn.gamma));
                t.push((format!("{name}{l}.bn.beta"), vec![c], &bn.beta));
                t.push((format!("{name}{l}.bn.mean"), vec![c], &bn.mean));
                t.push((format!("{name}{l}.bn.var"), vec![c], &bn.var));
            }
        }
        for (name, fc) in [("fc_enc0", &self.fc_enc[0]), ("fc_enc1", &self.fc_enc[1]), ("fc_dec0", &self.fc_dec[0]), ("fc_dec1", &self.fc_dec[1])] {
            t.push((format!("{name}.bias"), vec![fc.out_f], &fc.bias));
        }
        for (l, d) in self.dec.iter().enumerate() {
            t.push((format!("dconv{l}.weight"), vec![64, d.in_c, d.out_c], &d.weight));
            t.push((format!("dconv{l}.bias"), vec![d.out_c], &d.bias));
        }
        for (name, mlp) in [("mlps", &self.mlps), ("fold1", &self.folding.fold1), ("fold2", &self.folding.fold2)] {
            for (l, layer) in mlp.layers.iter().enumerate() {
                let (i, o) = (layer.linear.in_f, layer.linear.out_f);
                t.push((format!("{name}.{l}.weight"), vec![o, i], &layer.linear.weight));
                t.push((format!("{name}.{l}.bias"), vec![o], &layer.linear.bias));
                if let Some(bn) = &layer.bn {
                    t.push((format!("{name}.{l}.bn.gamma"), vec![o], &bn.gamma));
                    t.push((format!("{name}.{l}.bn.beta"), vec![o], &bn.beta));
                    t.push((format!("{name}.{l}.bn.mean"), vec![o], &bn.mean));
                    t.push((format!("{name}.{l}.bn.var"), vec![o], &bn.var));
                }
            }
        }
        t
    }

    /// Flat little-endian f64 blob of every stored tensor plus a manifest
    /// describing shapes and the procedural layers.
    pub fn to_blob(&self) -> (Vec<u8>, ParamManifest) {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, shape, data) in self.tensors() {
            entries.push(TensorEntry {
                name,
                shape,
                offset: blob.len() / 8,
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let procedural = [("fc_enc0", &self.fc_enc[0]), ("fc_enc1", &self.fc_enc[1]), ("fc_dec0", &self.fc_dec[0]), ("fc_dec1", &self.fc_dec[1])]
            .iter()
            .map(|(name, fc)| ProceduralEntry {
                name: name.to_string(),
                in_features: fc.in_f,
                out_features: fc.out_f,
                key: fc.key,
                scale: fc.scale,
            })
            .collect();
        (
            blob,
            ParamManifest {
                version: 1,
                arch: self.arch,
                tensors: entries,
                procedural,
            },
        )
    }

    pub fn from_blob(blob: &[u8], manifest: &ParamManifest) -> Result<SgcParams> {
        if blob.len() % 8 != 0 {
            return Err(Error::format("parameter blob length is not a multiple of 8"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        // shape template from a deterministic init, then overwrite
        let mut p = SgcParams::init(manifest.arch, 0)?;
        for e in &manifest.procedural {
            let fc = match e.name.as_str() {
                "fc_enc0" => &mut p.fc_enc[0],
                "fc_enc1" => &mut p.fc_enc[1],
                "fc_dec0" => &mut p.fc_dec[0],
                "fc_dec1" => &mut p.fc_dec[1],
                other => return Err(Error::shape(other, "unknown procedural layer")),
            };
            if fc.in_f != e.in_features || fc.out_f != e.out_features {
                return Err(Error::shape(&e.name, "procedural layer size differs from the architecture"));
            }
            fc.key = e.key;
            fc.scale = e.scale;
        }
        let template: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if template.len() != manifest.tensors.len() {
            return Err(Error::shape("parameters", format!("manifest lists {} tensors, architecture has {}", manifest.tensors.len(), template.len())));
        }
        let mut chunks = Vec::new();
        for ((name, shape), e) in template.iter().zip(&manifest.tensors) {
            if name != &e.name || shape != &e.shape {
                return Err(Error::shape(name, format!("manifest has {} {:?}, expected {:?}", e.name, e.shape, shape)));
            }
            let len: usize = shape.iter().product();
            let chunk = values
                .get(e.offset..e.offset + len)
                .ok_or_else(|| Error::shape(name, "blob is too short"))?
                .to_vec();
            chunks.push(chunk);
        }
        let mut it = chunks.into_iter();
        let mut next = || it.next().expect("chunk count checked");
        for c in &mut p.enc {
            c.weight = next();
            c.bias = next();
        }
        for bns in [&mut p.enc_bn, &mut p.dec_bn] {
            for bn in bns.iter_mut() {
                bn.gamma = next();
                bn.beta = next();
                bn.mean = next();
                bn.var = next();
            }
        }
        for fc in p.fc_enc.iter_mut().chain(p.fc_dec.iter_mut()) {
            fc.bias = next();
        }
        for d in &mut p.dec {
            d.weight = next();
            d.bias = next();
        }
        for mlp in [&mut p.mlps, &mut p.folding.fold1, &mut p.folding.fold2] {
            for layer in &mut mlp.layers {
                layer.linear.weight = next();
                layer.linear.bias = next();
                if let Some(bn) = &mut layer.bn {
                    bn.gamma = next();
                    bn.beta = next();
                    bn.mean = next();
                    bn.var = next();
                }
            }
        }
        Ok(p)
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let (blob, manifest) = self.to_blob();
        fs::write(dir.as_ref().join(format!("{stem}.bin")), blob)?;
        fs::write(dir.as_ref().join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<SgcParams> {
        let blob = fs::read(dir.as_ref().join(format!("{stem}.bin")))?;
        let manifest: ParamManifest = serde_json::from_str(&fs::read_to_string(dir.as_ref().join(format!("{stem}.json")))?)?;
        SgcParams::from_blob(&blob, &manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralEntry {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub key: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamManifest {
    pub version: u32,
    pub arch: SgcArch,
    pub tensors: Vec<TensorEntry>,
    pub procedural: Vec<ProceduralEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageShape {
    pub name: String,
    pub resolution: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgcTrace {
    /// Input lattice followed by the four pooled encoder maps.
    pub encoder: Vec<StageShape>,
    pub global_len: usize,
    /// Decoder maps after each skip addition.
    pub decoder: Vec<StageShape>,
    pub reverse_points: usize,
    pub coarse_points: usize,
    pub coarse_topped_up: bool,
    pub cubic_feature_len: usize,
    pub mlp_feature_len: usize,
    pub output_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgcOutput {
    pub coarse: PointCloud,
    pub output: PointCloud,
    pub global: Vec<f64>,
    pub trace: SgcTrace,
}

fn stage(name: &str, m: &FeatureMap) -> StageShape {
    StageShape {
        name: name.to_string(),
        resolution: m.resolution(),
        channels: m.channels(),
    }
}

fn expect(m: &FeatureMap, r: usize, c: usize, layer: &str) -> Result<()> {
    if m.shape() != (r, c) {
        return Err(Error::shape(layer, format!("produced {}³×{}, expected {r}³×{c}", m.resolution(), m.channels())));
    }
    Ok(())
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Forward pass of the completion network on a normalized gapped cloud.
pub fn sgc_forward(gapped: &PointCloud, params: &SgcParams, rng: &mut SeededRng) -> Result<SgcOutput> {
    let arch = &params.arch;
    arch.validate()?;
    let ch = arch.channels;
    let res = arch.encoder_resolutions();
    let g0 = gridding(gapped, arch.grid, arch.norm)?;
    let input = FeatureMap::from_data(arch.grid, 1, g0.into_values())?;
    let mut encoder = vec![stage("gridding", &input)];
    let mut skips = Vec::with_capacity(4);
    let mut x = input.clone();
    for l in 0..4 {
        let name = format!("conv{l}");
        let mut y = params.enc[l].forward(&x, &name)?;
        bn_act(y.data_mut(), &params.enc_bn[l], Activation::Leaky);
        x = max_pool2(&y);
        expect(&x, res[l], ch[l], &name)?;
        encoder.push(stage(&name, &x));
        skips.push(x.clone());
    }
    let flat = x.into_data();
    if flat.len() != arch.flat_len() {
        return Err(Error::shape("flatten", format!("{} values, expected {}", flat.len(), arch.flat_len())));
    }
    let mut h = params.fc_enc[0].forward(&flat, "fc_enc0")?;
    relu_in_place(&mut h);
    let mut global = params.fc_enc[1].forward(&h, "fc_enc1")?;
    relu_in_place(&mut global);
    let mut h = params.fc_dec[0].forward(&global, "fc_dec0")?;
    relu_in_place(&mut h);
    let mut h = params.fc_dec[1].forward(&h, "fc_dec1")?;
    relu_in_place(&mut h);
    let mut d = FeatureMap::from_data(res[3], ch[3], h)?;
    d.add_assign(&skips[3], "bottleneck skip")?;

    let skip_for = [&skips[2], &skips[1], &skips[0], &input];
    let mut decoder = Vec::new();
    let mut maps = Vec::new();
    for l in 0..4 {
        let name = format!("dconv{l}");
        let mut y = params.dec[l].forward(&d, &name)?;
        bn_act(y.data_mut(), &params.dec_bn[l], Activation::Relu);
        y.add_assign(skip_for[l], &name)?;
        decoder.push(stage(&name, &y));
        d = y;
        if l < 3 {
            maps.push(d.clone());
        }
    }
    expect(&d, arch.grid, 1, "dconv3")?;
    let grid = DenseGrid::from_values(arch.grid, d.into_data())?;
    let rev = gridding_reverse(&grid);
    let reverse_points = rev.cloud.len();
    let coarse = sample_coarse(&rev.cloud, arch.coarse, rng)?;
    let map_refs: Vec<&FeatureMap> = maps.iter().collect();
    let feats = cubic_feature_sampling(&coarse.cloud, &map_refs)?;
    let cubic_len = cubic_feature_len(&map_refs);
    if cubic_len != arch.cubic_len() || params.mlps.in_features() != cubic_len {
        return Err(Error::shape("cubic_feature_sampling", format!("{cubic_len} features, MLPs expect {}", params.mlps.in_features())));
    }
    let point_feats = params.mlps.forward(&feats, "mlps")?;
    let output = folding_densify(&coarse.cloud, &point_feats, &params.folding, &arch.folding)?;
    if output.len() != arch.output_count() {
        return Err(Error::shape("folding", format!("{} points, expected {}", output.len(), arch.output_count())));
    }
    Ok(SgcOutput {
        trace: SgcTrace {
            encoder,
            global_len: global.len(),
            decoder,
            reverse_points,
            coarse_points: coarse.cloud.len(),
            coarse_topped_up: coarse.topped_up,
            cubic_feature_len: cubic_len,
            mlp_feature_len: params.mlps.out_features(),
            output_points: output.len(),
        },
        coarse: coarse.cloud,
        output,
        global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = SeededRng::new(seed);
        PointCloud::normalized(
            (0..n)
                .map(|_| {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    let y: f64 = rng.gen_range(-1.0..1.0);
                    Point3::new(x, y, 0.3 * (x * 2.0).sin() * y)
                })
                .collect(),
        )
    }

    #[test]
    fn tiny_graph_shapes() {
        let p = SgcParams::init(SgcArch::tiny(), 1).unwrap();
        let out = sgc_forward(&cloud(500, 2), &p, &mut SeededRng::new(3)).unwrap();
        let res: Vec<usize> = out.trace.encoder.iter().map(|s| s.resolution).collect();
        assert_eq!(res, vec![16, 8, 4, 2, 1]);
        let dres: Vec<usize> = out.trace.decoder.iter().map(|s| s.resolution).collect();
        assert_eq!(dres, vec![2, 4, 8, 16]);
        assert_eq!(out.global.len(), 12);
        assert_eq!(out.coarse.len(), 64);
        assert_eq!(out.output.len(), 576);
        assert_eq!(out.trace.cubic_feature_len, 8 * (8 + 6 + 4));
    }

    #[test]
    fn deterministic() {
        let p = SgcParams::init(SgcArch::tiny(), 1).unwrap();
        let c = cloud(300, 4);
        let a = sgc_forward(&c, &p, &mut SeededRng::new(5)).unwrap();
        let b = sgc_forward(&c, &p, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_decoder_and_folding_tile_the_coarse_cloud() {
        let mut p = SgcParams::init(SgcArch::tiny(), 1).unwrap();
        p.zero_decoder();
        p.zero_folding();
        let out = sgc_forward(&cloud(300, 6), &p, &mut SeededRng::new(7)).unwrap();
        let tiled = super::super::folding::tile(&out.coarse, &p.arch.folding);
        assert_eq!(out.output, tiled);
    }

    #[test]
    fn blob_roundtrip() {
        let p = SgcParams::init(SgcArch::tiny(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path(), "params").unwrap();
        assert_eq!(SgcParams::load(dir.path(), "params").unwrap(), p);
        let (blob, mut m) = p.to_blob();
        m.tensors[3].shape = vec![7];
        assert!(matches!(SgcParams::from_blob(&blob, &m), Err(Error::Shape { .. })));
        assert!(SgcParams::from_blob(&blob[..blob.len() - 8], &p.to_blob().1).is_err());
    }

    #[test]
    fn bad_arch_is_rejected() {
        let arch = SgcArch { grid: 24, ..SgcArch::tiny() };
        assert!(SgcParams::init(arch, 0).is_err());
    }
}
