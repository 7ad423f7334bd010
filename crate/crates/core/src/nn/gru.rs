use super::{RecurrentCell, StepCache, StepGrads};
use crate::scalar::Scalar;

/// Gated recurrent unit. The reset gate scales the recurrent part of the
/// candidate pre-activation:
/// `n = tanh(W_n x + b_n + r * (U_n h_prev))`, `h = (1 - z) n + z h_prev`.
pub struct Gru;

impl RecurrentCell for Gru {
    const GATES: usize = 3;

    fn activate<S: Scalar>(input_pre: &[S], h_prev: &[S], _c_prev: &[S], cache: &mut StepCache<S>) {
        let h = h_prev.len();
        let one = S::one();
        for j in 0..h {
            let z = (input_pre[j] + cache.recurrent[j]).sigmoid();
            let r = (input_pre[h + j] + cache.recurrent[h + j]).sigmoid();
            let n = (input_pre[2 * h + j] + r * cache.recurrent[2 * h + j]).tanh();
            cache.gates[j] = z;
            cache.gates[h + j] = r;
            cache.gates[2 * h + j] = n;
            cache.hidden[j] = (one - z) * n + z * h_prev[j];
        }
    }

    fn gate_grads<S: Scalar>(
        cache: &StepCache<S>,
        h_prev: &[S],
        _c_prev: &[S],
        d_hidden: &[S],
        _d_cell: &[S],
        out: StepGrads<'_, S>,
    ) {
        let h = h_prev.len();
        let one = S::one();
        for j in 0..h {
            let (z, r, n) = (cache.gates[j], cache.gates[h + j], cache.gates[2 * h + j]);
            let dh = d_hidden[j];
            let dan = dh * (one - z) * (one - n * n);
            let daz = dh * (h_prev[j] - n) * z * (one - z);
            let dar = dan * cache.recurrent[2 * h + j] * r * (one - r);
            out.d_input[j] = daz;
            out.d_input[h + j] = dar;
            out.d_input[2 * h + j] = dan;
            out.d_recurrent[j] = daz;
            out.d_recurrent[h + j] = dar;
            out.d_recurrent[2 * h + j] = dan * r;
            out.d_hidden_prev[j] = dh * z;
            out.d_cell_prev[j] = S::zero();
        }
    }
}
