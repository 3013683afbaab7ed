use alloc::format;
use alloc::vec::Vec;

use super::{JepaConfig, MaskSpec};
use crate::error::{contract, Error, Result};
use crate::numerics::{AttentionBlock, Bound, Graph, LayerNorm, Linear, ParamId, ParamSet, Tensor, Var, INIT_STD};
use crate::rng::Rng;

/// Token embedding, learned positions, attention blocks and a final norm.
/// Runs on any subset of grid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    embed: Linear,
    pos: ParamId,
    blocks: Vec<AttentionBlock>,
    norm: LayerNorm,
}

impl Encoder {
    fn new(params: &mut ParamSet, cfg: &JepaConfig, rng: &mut Rng) -> Result<Self> {
        let embed = Linear::new(params, "embed", cfg.in_dim, cfg.d, INIT_STD, rng);
        let pos = params.add("pos", Tensor::randn(&[cfg.grid.len(), cfg.d], INIT_STD, rng));
        let blocks = (0..cfg.encoder_depth)
            .map(|l| AttentionBlock::new(params, &format!("block{l}"), cfg.d, cfg.heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(params, "norm", cfg.d);
        Ok(Self { embed, pos, blocks, norm })
    }

    /// Representations `[k×d]` of the tokens at `index`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, tokens: Var, index: &[usize]) -> Result<Var> {
        let x = g.gather_rows(tokens, index)?;
        let x = self.embed.forward(g, p, x)?;
        let pos = g.gather_rows(p.var(self.pos), index)?;
        let mut x = g.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        self.norm.forward(g, p, x)
    }
}

/// Maps visible-token representations plus learned mask tokens at the
/// masked positions to predicted representations of the masked tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    embed: Linear,
    mask_token: ParamId,
    pos: ParamId,
    blocks: Vec<AttentionBlock>,
    norm: LayerNorm,
    out: Linear,
}

impl Predictor {
    fn new(params: &mut ParamSet, cfg: &JepaConfig, rng: &mut Rng) -> Result<Self> {
        let embed = Linear::new(params, "embed", cfg.d, cfg.d, INIT_STD, rng);
        let mask_token = params.add("mask_token", Tensor::randn(&[1, cfg.d], INIT_STD, rng));
        let pos = params.add("pos", Tensor::randn(&[cfg.grid.len(), cfg.d], INIT_STD, rng));
        let blocks = (0..cfg.predictor_depth)
            .map(|l| AttentionBlock::new(params, &format!("block{l}"), cfg.d, cfg.heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(params, "norm", cfg.d);
        let out = Linear::new(params, "out", cfg.d, cfg.d, INIT_STD, rng);
        Ok(Self { embed, mask_token, pos, blocks, norm, out })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, context: Var, mask: &MaskSpec) -> Result<Var> {
        let ctx = self.embed.forward(g, p, context)?;
        let ctx_pos = g.gather_rows(p.var(self.pos), &mask.visible)?;
        let ctx = g.add(ctx, ctx_pos)?;
        let queries = g.gather_rows(p.var(self.mask_token), &alloc::vec![0; mask.masked.len()])?;
        let q_pos = g.gather_rows(p.var(self.pos), &mask.masked)?;
        let queries = g.add(queries, q_pos)?;
        let mut x = g.concat_rows(&[ctx, queries])?;
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        let x = g.slice_rows(x, mask.visible.len(), mask.masked.len())?;
        let x = self.norm.forward(g, p, x)?;
        self.out.forward(g, p, x)
    }
}

/// Context encoder, predictor and target encoder with their parameters.
/// The target encoder shares the context encoder's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct JepaModel {
    pub config: JepaConfig,
    pub encoder: Encoder,
    pub predictor: Predictor,
    pub context_params: ParamSet,
    pub predictor_params: ParamSet,
    pub target_params: ParamSet,
}

impl JepaModel {
    /// Fresh model; the target encoder starts as a copy of the context encoder.
    pub fn new(config: JepaConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::RngSeed::new(config.seed, 0x1E9A).rng();
        let mut context_params = ParamSet::new();
        let encoder = Encoder::new(&mut context_params, &config, &mut rng)?;
        let mut predictor_params = ParamSet::new();
        let predictor = Predictor::new(&mut predictor_params, &config, &mut rng)?;
        let target_params = context_params.clone();
        Ok(Self { config, encoder, predictor, context_params, predictor_params, target_params })
    }

    fn check_tokens(&self, tokens: &Tensor) -> Result<()> {
        let want = [self.config.grid.len(), self.config.in_dim];
        contract!(tokens.shape() == want, "clip tokens {:?}, expected {:?}", tokens.shape(), want);
        Ok(())
    }

    /// Target-encoder representations of every token (no gradient).
    pub fn target_representations(&self, tokens: &Tensor) -> Result<Tensor> {
        self.encode_all(&self.target_params, tokens)
    }

    /// Encoder representations of every token under `params` (context or
    /// target parameters), without gradient.
    pub fn encode_all(&self, params: &ParamSet, tokens: &Tensor) -> Result<Tensor> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(tokens.clone());
        let all: Vec<usize> = (0..self.config.grid.len()).collect();
        let out = self.encoder.forward(&mut g, &p, x, &all)?;
        Ok(g.value(out).clone())
    }

    /// Adds one clip's loss to `g`. With `targets` given they enter as
    /// constants; otherwise the context encoder computes them on the full
    /// clip inside the graph, so gradients reach both branches.
    pub(crate) fn loss_graph(
        &self,
        g: &mut Graph,
        ctx: &Bound,
        pred: &Bound,
        tokens: &Tensor,
        mask: &MaskSpec,
        targets: Option<&Tensor>,
    ) -> Result<Var> {
        self.check_tokens(tokens)?;
        if mask.masked.is_empty() {
            return Err(Error::InvalidInput("empty mask".into()));
        }
        let x = g.constant(tokens.clone());
        let context = self.encoder.forward(g, ctx, x, &mask.visible)?;
        let predicted = self.predictor.forward(g, pred, context, mask)?;
        let target = match targets {
            Some(t) => {
                let rows: Vec<Vec<f64>> = mask.masked.iter().map(|&i| t.row(i).to_vec()).collect();
                g.constant(Tensor::from_rows(&rows)?)
            }
            None => {
                let all: Vec<usize> = (0..self.config.grid.len()).collect();
                let full = self.encoder.forward(g, ctx, x, &all)?;
                g.gather_rows(full, &mask.masked)?
            }
        };
        g.l1(predicted, target)
    }
}

/// Mean absolute error between predicted and target representations of the
/// masked tokens, with targets from the target encoder.
pub fn jepa_loss(model: &JepaModel, tokens: &Tensor, mask: &MaskSpec) -> Result<f64> {
    let targets = model.target_representations(tokens)?;
    let mut g = Graph::new();
    let ctx = model.context_params.bind(&mut g, false);
    let pred = model.predictor_params.bind(&mut g, false);
    let l = model.loss_graph(&mut g, &ctx, &pred, tokens, mask, Some(&targets))?;
    Ok(g.scalar(l))
}
