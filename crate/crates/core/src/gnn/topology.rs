use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::system::{stack_complex, steering_vector, ChannelSample};

/// Complete bipartite graph between APs and users plus a star between APs
/// and the single sensing target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphTopology {
    pub ap_count: usize,
    pub ue_count: usize,
}

impl GraphTopology {
    pub const TARGET_COUNT: usize = 1;

    pub fn new(ap_count: usize, ue_count: usize) -> Result<Self> {
        if ap_count == 0 || ue_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "graph needs at least one AP and one user, got {ap_count} and {ue_count}"
            )));
        }
        Ok(GraphTopology { ap_count, ue_count })
    }

    pub fn of(sample: &ChannelSample) -> Result<Self> {
        Self::new(sample.ap_count(), sample.ue_count())
    }

    /// `(ap, ue)` pairs, AP-major.
    pub fn ap_ue_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ap_count).flat_map(move |m| (0..self.ue_count).map(move |u| (m, u)))
    }

    /// `(ap, target)` pairs.
    pub fn ap_st_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ap_count).map(|m| (m, 0))
    }
}

/// Initial edge features of one sample: stacked channels on AP-UE edges and
/// stacked transmit steering vectors on AP-target edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatures {
    pub topology: GraphTopology,
    pub width: usize,
    /// `[M][U][2 N_t]`
    pub ap_ue: Vec<f64>,
    /// `[M][2 N_t]`
    pub ap_st: Vec<f64>,
}

impl EdgeFeatures {
    pub fn ap_ue_edge(&self, m: usize, u: usize) -> &[f64] {
        let i = (m * self.topology.ue_count + u) * self.width;
        &self.ap_ue[i..i + self.width]
    }

    pub fn ap_st_edge(&self, m: usize) -> &[f64] {
        &self.ap_st[m * self.width..(m + 1) * self.width]
    }
}

pub fn init_edge_features(sample: &ChannelSample, tx_antennas: usize) -> Result<EdgeFeatures> {
    if sample.tx_antennas() != tx_antennas {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} transmit antennas, network expects {tx_antennas}",
            sample.tx_antennas()
        )));
    }
    let topology = GraphTopology::of(sample)?;
    let mut ap_ue = Vec::with_capacity(topology.ap_count * topology.ue_count * 2 * tx_antennas);
    for (m, u) in topology.ap_ue_edges() {
        ap_ue.extend(stack_complex(sample.h(m, u)));
    }
    let mut ap_st = Vec::with_capacity(topology.ap_count * 2 * tx_antennas);
    for (m, _) in topology.ap_st_edges() {
        ap_st.extend(stack_complex(&steering_vector(
            sample.theta()[m],
            tx_antennas,
        )?));
    }
    Ok(EdgeFeatures {
        topology,
        width: 2 * tx_antennas,
        ap_ue,
        ap_st,
    })
}

/// Several samples with the same topology packed into dense tensors.
#[derive(Debug, Clone)]
pub struct GraphBatch<T> {
    pub topology: GraphTopology,
    pub tx_antennas: usize,
    /// `[B, M, U, 2 N_t]`
    pub ue_edges: Tensor<T>,
    /// `[B, M, 2 N_t]`
    pub st_edges: Tensor<T>,
    /// `[B, M]`: total two-way gain `sum_mr zeta2[m][mr]` seen from transmit AP `m`.
    pub target_gain: Tensor<T>,
}

impl<T: Real> GraphBatch<T> {
    pub fn new(samples: &[&ChannelSample], tx_antennas: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let topology = GraphTopology::of(first)?;
        let (b, m_count) = (samples.len(), topology.ap_count);
        let width = 2 * tx_antennas;
        let mut ue = Vec::with_capacity(b * m_count * topology.ue_count * width);
        let mut st = Vec::with_capacity(b * m_count * width);
        let mut gain = Vec::with_capacity(b * m_count);
        for s in samples {
            let f = init_edge_features(s, tx_antennas)?;
            if f.topology != topology {
                return Err(Error::DimensionMismatch(format!(
                    "batch mixes {topology:?} with {:?}",
                    f.topology
                )));
            }
            ue.extend(f.ap_ue.iter().map(|x| T::from_f64(*x)));
            st.extend(f.ap_st.iter().map(|x| T::from_f64(*x)));
            for mt in 0..m_count {
                let g: f64 = (0..m_count).map(|mr| s.zeta2(mt, mr)).sum();
                gain.push(T::from_f64(g));
            }
        }
        Ok(GraphBatch {
            topology,
            tx_antennas,
            ue_edges: Tensor::new(&[b, m_count, topology.ue_count, width], ue)?,
            st_edges: Tensor::new(&[b, m_count, width], st)?,
            target_gain: Tensor::new(&[b, m_count], gain)?,
        })
    }

    pub fn len(&self) -> usize {
        self.st_edges.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::system::generate_samples;
    use num_complex::Complex64;

    #[test]
    fn broadside_target_edge() {
        let h = vec![Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)];
        let s = ChannelSample::new(1, 1, 2, h, vec![0.0], vec![1.0]).unwrap();
        let f = init_edge_features(&s, 2).unwrap();
        assert_eq!(f.ap_st_edge(0), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.ap_ue_edge(0, 0), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn widths_and_edge_counts() {
        let cfg = SystemConfig::default();
        let s = &generate_samples(&cfg, 1, 1).unwrap()[0];
        let f = init_edge_features(s, cfg.tx_antennas).unwrap();
        assert_eq!(
            f.topology.ap_ue_edges().count(),
            cfg.ap_count * cfg.ue_count
        );
        assert_eq!(f.topology.ap_st_edges().count(), cfg.ap_count);
        assert_eq!(
            f.ap_ue.len(),
            cfg.ap_count * cfg.ue_count * 2 * cfg.tx_antennas
        );
        assert_eq!(f.ap_st.len(), cfg.ap_count * 2 * cfg.tx_antennas);
        assert!(init_edge_features(s, 4).is_err());
    }

    #[test]
    fn batch_rejects_mixed_topologies() {
        let a = generate_samples(&SystemConfig::default(), 1, 1).unwrap();
        let b = generate_samples(&SystemConfig::default().with_ap_count(3), 1, 1).unwrap();
        assert!(GraphBatch::<f32>::new(&[&a[0], &b[0]], 8).is_err());
        let ok = GraphBatch::<f32>::new(&[&a[0], &a[0]], 8).unwrap();
        assert_eq!(ok.ue_edges.shape(), &[2, 5, 2, 16]);
        assert_eq!(ok.target_gain.shape(), &[2, 5]);
    }
}
