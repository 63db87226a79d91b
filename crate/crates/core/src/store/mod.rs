//! Student policies, labelled datasets, the teacher-likeness discriminator and
//! their on-disk formats.

mod dataset;
mod discriminator;
mod io;
mod policy;

pub use dataset::{AggDataset, Record};
pub use discriminator::{train_discriminator, Discriminator};
pub use io::{
    load_dataset, load_policy, save_dataset, save_policy, PolicyDocument, DATASET_FORMAT,
    FORMAT_VERSION, POLICY_FORMAT,
};
pub use policy::{bc_fit, policy_probs, LinearSoftmaxPolicy, TabularPolicy, Trainable};
