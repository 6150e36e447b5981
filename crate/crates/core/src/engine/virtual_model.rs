use crate::data::Partition;
use crate::error::{Error, Result};
use crate::grouping::Membership;
use crate::models::{self, ModelParams};

/// Centrally trained shadows of the federated models. `v_global` restarts
/// from w at every global interval and `v_group[k]` from w^k at every group
/// interval; in between they take full-batch gradient steps on the pooled
/// data of all nodes or of group k.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTrace {
    pub v_group: Vec<ModelParams>,
    pub v_global: ModelParams,
    /// Current group interval, from 1.
    pub r: usize,
    /// Current global interval, from 1.
    pub l: usize,
}

impl VirtualTrace {
    pub fn new(w: &ModelParams, num_groups: usize) -> Self {
        VirtualTrace { v_group: vec![w.clone(); num_groups], v_global: w.clone(), r: 1, l: 1 }
    }

    /// Start of a global interval (also a group interval).
    pub fn sync_global(&mut self, w: &ModelParams) {
        self.v_global = w.clone();
        self.v_group.iter_mut().for_each(|v| *v = w.clone());
        self.l += 1;
        self.r += 1;
    }

    pub fn sync_groups(&mut self, groups: &[ModelParams]) {
        self.v_group = groups.to_vec();
        self.r += 1;
    }

    /// New group count, all starting from `w`.
    pub fn regroup(&mut self, w: &ModelParams, num_groups: usize) {
        self.v_group = vec![w.clone(); num_groups];
    }
}

/// Full-batch gradient of the pooled loss of `nodes`, each weighted by its
/// example count.
fn pooled_gradient(params: &ModelParams, partition: &Partition, nodes: &[usize]) -> Result<ModelParams> {
    let total: f64 = nodes.iter().map(|&i| partition.nodes[i].examples.len() as f64).sum();
    let mut acc = ModelParams::zeros(params.spec());
    for &i in nodes {
        let ex = &partition.nodes[i].examples;
        acc = acc.axpy(ex.len() as f64 / total, &models::gradient(params, ex)?);
    }
    Ok(acc)
}

/// Advances every virtual model by one gradient step of size `eta`.
pub fn virtual_step(vt: &mut VirtualTrace, partition: &Partition, membership: &Membership, eta: f64) -> Result<()> {
    if membership.num_groups() != vt.v_group.len() || membership.num_nodes() != partition.num_nodes() {
        return Err(Error::Shape("virtual trace, membership and partition disagree".into()));
    }
    let all: Vec<usize> = (0..partition.num_nodes()).collect();
    vt.v_global = vt.v_global.axpy(-eta, &pooled_gradient(&vt.v_global, partition, &all)?);
    for (k, members) in membership.groups().iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        vt.v_group[k] = vt.v_group[k].axpy(-eta, &pooled_gradient(&vt.v_group[k], partition, members)?);
    }
    Ok(())
}
