use rand::Rng;

use super::TreeLmConfig;
use crate::deptree::EdgeType;
use crate::error::{Error, Result};
use crate::nncore::{LstmStack, Matrix, ParamSet};

/// Initial value of the learned log-normaliser used by NCE training.
pub const LN_Z_INIT: f64 = 9.0;

const STACK_NAMES: [&str; 4] = ["gen_left", "gen_right", "gen_nx_left", "gen_nx_right"];

/// All trainable tensors of a tree language model.
///
/// The embedding and output matrices exist once and are shared by every
/// stack; [`StackView`] exposes a stack together with them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `s × |V|`, one column per word.
    pub embed: Matrix,
    /// `|V| × d`.
    pub out: Matrix,
    /// `|V| × 1`.
    pub out_bias: Matrix,
    /// Indexed by [`EdgeType::index`].
    pub stacks: [LstmStack; 4],
    /// Left-dependent summariser; present only for the Ld variant.
    pub ld: Option<LstmStack>,
    /// `ln Ẑ` for NCE training, `1 × 1`.
    pub log_z: Matrix,
}

impl ModelParams {
    pub fn zeros(cfg: &TreeLmConfig) -> Self {
        let (v, s, d, l) = (cfg.vocab_size, cfg.embed, cfg.hidden, cfg.layers);
        ModelParams {
            embed: Matrix::zeros(s, v),
            out: Matrix::zeros(v, d),
            out_bias: Matrix::zeros(v, 1),
            stacks: EdgeType::ALL.map(|e| LstmStack::zeros(cfg.input_width(e), d, l)),
            ld: cfg.is_ld().then(|| LstmStack::zeros(s, d, l)),
            log_z: Matrix::zeros(1, 1),
        }
    }

    /// Uniform weights in `±init_range`; zero biases except the forget
    /// gates; zero output bias; `ln Ẑ = 9`.
    pub fn init<R: Rng + ?Sized>(cfg: &TreeLmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (v, s, d, l, r, fb) = (cfg.vocab_size, cfg.embed, cfg.hidden, cfg.layers, cfg.init_range, cfg.forget_bias);
        let embed = Matrix::uniform(s, v, r, rng);
        let out = Matrix::uniform(v, d, r, rng);
        let stacks = EdgeType::ALL.map(|e| LstmStack::init(cfg.input_width(e), d, l, r, fb, rng));
        let ld = cfg.is_ld().then(|| LstmStack::init(s, d, l, r, fb, rng));
        Ok(ModelParams {
            embed,
            out,
            out_bias: Matrix::zeros(v, 1),
            stacks,
            ld,
            log_z: Matrix::filled(1, 1, LN_Z_INIT),
        })
    }

    pub fn stack(&self, edge: EdgeType) -> &LstmStack {
        &self.stacks[edge.index()]
    }

    pub fn view(&self, edge: EdgeType) -> StackView<'_> {
        StackView { params: self, edge }
    }

    pub fn view_mut(&mut self, edge: EdgeType) -> StackViewMut<'_> {
        StackViewMut { params: self, edge }
    }

    pub fn ln_z(&self) -> f64 {
        self.log_z.get(0, 0)
    }

    /// Checks tensor shapes against `cfg`.
    pub fn check_shapes(&self, cfg: &TreeLmConfig) -> Result<()> {
        let expected = ModelParams::zeros(cfg);
        let mine = self.tensors();
        let want = expected.tensors();
        if mine.len() != want.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration expects {}",
                mine.len(),
                want.len()
            )));
        }
        for ((n, a), (_, b)) in mine.iter().zip(&want) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "tensor {n} has shape {:?}, configuration expects {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = vec![
            ("embed".into(), &self.embed),
            ("out".into(), &self.out),
            ("out_bias".into(), &self.out_bias),
        ];
        for (name, stack) in STACK_NAMES.iter().zip(&self.stacks) {
            v.extend(stack.tensors().into_iter().map(|(n, t)| (format!("{name}.{n}"), t)));
        }
        if let Some(ld) = &self.ld {
            v.extend(ld.tensors().into_iter().map(|(n, t)| (format!("ld.{n}"), t)));
        }
        v.push(("log_z".into(), &self.log_z));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embed, &mut self.out, &mut self.out_bias];
        for stack in &mut self.stacks {
            v.extend(stack.tensors_mut());
        }
        if let Some(ld) = &mut self.ld {
            v.extend(ld.tensors_mut());
        }
        v.push(&mut self.log_z);
        v
    }
}

/// One edge-type LSTM with the shared embedding and output layer.
#[derive(Clone, Copy)]
pub struct StackView<'a> {
    params: &'a ModelParams,
    pub edge: EdgeType,
}

impl<'a> StackView<'a> {
    pub fn stack(&self) -> &'a LstmStack {
        self.params.stack(self.edge)
    }

    pub fn embedding(&self) -> &'a Matrix {
        &self.params.embed
    }

    pub fn output(&self) -> &'a Matrix {
        &self.params.out
    }
}

pub struct StackViewMut<'a> {
    params: &'a mut ModelParams,
    pub edge: EdgeType,
}

impl StackViewMut<'_> {
    pub fn stack(&mut self) -> &mut LstmStack {
        &mut self.params.stacks[self.edge.index()]
    }

    pub fn embedding(&mut self) -> &mut Matrix {
        &mut self.params.embed
    }

    pub fn output(&mut self) -> &mut Matrix {
        &mut self.params.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treelm::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_per_variant() {
        let cfg = TreeLmConfig::new(Variant::LdTreeLstm, 7, 6, 2);
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.embed.shape(), (3, 7));
        assert_eq!(p.out.shape(), (7, 6));
        assert_eq!(p.stack(EdgeType::Right).input_size(), 9);
        assert_eq!(p.stack(EdgeType::NxRight).input_size(), 3);
        assert_eq!(p.ld.as_ref().unwrap().input_size(), 3);
        assert_eq!(p.ln_z(), 9.0);
        p.check_shapes(&cfg).unwrap();

        let tree_cfg = TreeLmConfig::new(Variant::TreeLstm, 7, 6, 2);
        assert!(ModelParams::zeros(&tree_cfg).ld.is_none());
        assert!(p.check_shapes(&tree_cfg).is_err());
    }

    #[test]
    fn tied_storage_is_shared_by_all_views() {
        let cfg = TreeLmConfig::new(Variant::TreeLstm, 5, 4, 1);
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        p.view_mut(EdgeType::NxLeft).embedding().set(1, 3, 42.0);
        p.view_mut(EdgeType::Left).output().set(2, 0, -7.0);
        for e in EdgeType::ALL {
            let v = p.view(e);
            assert_eq!(v.embedding().get(1, 3), 42.0);
            assert_eq!(v.output().get(2, 0), -7.0);
            assert!(std::ptr::eq(v.embedding(), &p.embed));
        }
    }

    #[test]
    fn tensor_names_are_unique() {
        let cfg = TreeLmConfig::new(Variant::LdTreeLstm, 5, 4, 2);
        let mut p = ModelParams::zeros(&cfg);
        let mut names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let count = names.len();
        assert_eq!(count, p.tensors_mut().len());
        names.sort();
        names.dedup();
        assert_eq!(names.len(), count);
    }
}
