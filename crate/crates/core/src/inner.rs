//! State shared by the critic and actor inner loops of one epoch.

use crate::cmdp::{sample_into, ChainCursor, TabularCmdp, Transition};
use crate::error::Result;
use crate::mlmc::{draw_level, MlmcConfig, MlmcDraw};
use crate::policy::ParamPolicy;
use crate::rng::StreamRng;
use crate::telemetry::TelemetrySink;

pub struct InnerLoop<'a> {
    pub cmdp: &'a TabularCmdp,
    pub policy: &'a ParamPolicy,
    pub cursor: &'a mut ChainCursor,
    pub rng: &'a mut StreamRng,
    /// Outer epoch index, copied into telemetry rows.
    pub epoch: usize,
    pub sink: &'a mut dyn TelemetrySink,
}

impl InnerLoop<'_> {
    /// Draws a level and rolls the chain forward by its trajectory length,
    /// replacing the contents of `buf`.
    pub fn next_trajectory(&mut self, mlmc: &MlmcConfig, buf: &mut Vec<Transition>) -> Result<MlmcDraw> {
        let draw = draw_level(self.rng, mlmc);
        buf.clear();
        sample_into(self.cmdp, self.policy, self.cursor, draw.traj_len, self.rng, buf)?;
        Ok(draw)
    }
}
