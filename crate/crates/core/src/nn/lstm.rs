use super::{RecurrentCell, StepCache, StepGrads};
use crate::scalar::Scalar;

/// Long short-term memory cell with input, forget, candidate and output gates.
pub struct Lstm;

impl RecurrentCell for Lstm {
    const GATES: usize = 4;

    fn activate<S: Scalar>(input_pre: &[S], _h_prev: &[S], c_prev: &[S], cache: &mut StepCache<S>) {
        let h = c_prev.len();
        let pre = |k: usize| input_pre[k] + cache.recurrent[k];
        for j in 0..h {
            let i = pre(j).sigmoid();
            let f = pre(h + j).sigmoid();
            let g = pre(2 * h + j).tanh();
            let o = pre(3 * h + j).sigmoid();
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            cache.gates[j] = i;
            cache.gates[h + j] = f;
            cache.gates[2 * h + j] = g;
            cache.gates[3 * h + j] = o;
            cache.cell[j] = c;
            cache.cell_tanh[j] = tc;
            cache.hidden[j] = o * tc;
        }
    }

    fn gate_grads<S: Scalar>(
        cache: &StepCache<S>,
        _h_prev: &[S],
        c_prev: &[S],
        d_hidden: &[S],
        d_cell: &[S],
        out: StepGrads<'_, S>,
    ) {
        let h = c_prev.len();
        let one = S::one();
        for j in 0..h {
            let (i, f, g, o) = (
                cache.gates[j],
                cache.gates[h + j],
                cache.gates[2 * h + j],
                cache.gates[3 * h + j],
            );
            let tc = cache.cell_tanh[j];
            let dh = d_hidden[j];
            let dc = d_cell[j] + dh * o * (one - tc * tc);
            let dzi = dc * g * i * (one - i);
            let dzf = dc * c_prev[j] * f * (one - f);
            let dzg = dc * i * (one - g * g);
            let dzo = dh * tc * o * (one - o);
            for (k, dz) in [dzi, dzf, dzg, dzo].into_iter().enumerate() {
                out.d_input[k * h + j] = dz;
                out.d_recurrent[k * h + j] = dz;
            }
            out.d_hidden_prev[j] = S::zero();
            out.d_cell_prev[j] = dc * f;
        }
    }
}
