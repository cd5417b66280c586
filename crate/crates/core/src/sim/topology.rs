use crate::cost::LinkSpec;
use crate::model::{WorkerId, WorkerProfile};

/// Workers and links, with the set of workers currently present. Neighbor
/// sets are derived from links whose endpoints are both present.
#[derive(Clone, Debug)]
pub struct Topology {
    workers: Vec<WorkerProfile>,
    links: Vec<LinkSpec>,
    present: Vec<bool>,
    incident: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(workers: Vec<WorkerProfile>, links: Vec<LinkSpec>) -> Self {
        let n = workers.len();
        let mut incident = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            incident[l.a.0 as usize].push(i);
            incident[l.b.0 as usize].push(i);
        }
        for inc in &mut incident {
            inc.sort_by_key(|&i| {
                let l = &links[i];
                (l.a.0.min(l.b.0), l.a.0.max(l.b.0))
            });
        }
        Topology { present: vec![true; n], workers, links, incident }
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn profile(&self, w: WorkerId) -> &WorkerProfile {
        &self.workers[w.0 as usize]
    }

    pub fn profiles(&self) -> &[WorkerProfile] {
        &self.workers
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link(&self, index: usize) -> &LinkSpec {
        &self.links[index]
    }

    pub fn is_present(&self, w: WorkerId) -> bool {
        self.present[w.0 as usize]
    }

    pub fn set_present(&mut self, w: WorkerId, present: bool) {
        self.present[w.0 as usize] = present;
    }

    /// Every link touching `w`, present or not.
    pub fn incident_links(&self, w: WorkerId) -> impl Iterator<Item = &LinkSpec> {
        self.incident[w.0 as usize].iter().map(move |&i| &self.links[i])
    }

    /// Link index between `a` and `b` if it exists, regardless of presence.
    pub fn link_between(&self, a: WorkerId, b: WorkerId) -> Option<usize> {
        self.incident[a.0 as usize].iter().copied().find(|&i| self.links[i].connects(a, b))
    }

    /// Links of `w` to present neighbors; empty when `w` itself is absent.
    pub fn present_links_of(&self, w: WorkerId) -> impl Iterator<Item = (WorkerId, &LinkSpec)> {
        let here = self.is_present(w);
        self.incident[w.0 as usize].iter().filter_map(move |&i| {
            let l = &self.links[i];
            let other = l.other(w);
            (here && self.is_present(other)).then_some((other, l))
        })
    }

    /// Current one-hop neighbors of `w`, in id order.
    pub fn neighbors(&self, w: WorkerId) -> Vec<WorkerId> {
        let mut out: Vec<WorkerId> = self.present_links_of(w).map(|(o, _)| o).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn find(&self, name: &str) -> Option<WorkerId> {
        self.workers.iter().find(|w| w.name == name).map(|w| w.id)
    }

    pub fn name(&self, w: WorkerId) -> &str {
        &self.workers[w.0 as usize].name
    }
}
