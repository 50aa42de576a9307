pub mod tensor;
pub mod layers;
pub mod audio;
pub mod text;
pub mod model;
pub mod decode;
pub mod metrics;
pub mod assets;
pub mod forge;
pub mod toy;
pub mod train;
