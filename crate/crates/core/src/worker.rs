use crate::model::{SimTime, Task, WorkerId};
use crate::protocol::RtcState;
use crate::scheduler::{QueueDiscipline, TaskQueue};

/// The task a worker's CPU is busy with.
#[derive(Clone, Debug, PartialEq)]
pub struct Running {
    pub task: Task,
    pub started_at: SimTime,
    pub finish_at: SimTime,
}

#[derive(Clone, Debug)]
pub struct WorkerState {
    pub id: WorkerId,
    pub queue: TaskQueue,
    pub running: Option<Running>,
    pub rtc: RtcState,
    pub present: bool,
}

impl WorkerState {
    pub fn new(id: WorkerId) -> Self {
        Self::with_discipline(id, QueueDiscipline::Priority)
    }

    pub fn with_discipline(id: WorkerId, discipline: QueueDiscipline) -> Self {
        WorkerState { id, queue: TaskQueue::new(discipline), running: None, rtc: RtcState::default(), present: true }
    }

    pub fn is_computing(&self) -> bool {
        self.running.is_some()
    }
}
