pub mod classify;
pub mod cli;
pub mod complex;
pub mod gf;
pub mod invariants;
pub mod iso;
pub mod oracle;
pub mod random;
pub mod reduce;
pub mod simplify;
pub mod twostory;
