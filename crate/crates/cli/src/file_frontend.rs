//! Frontend over precomputed feature files: one "PLF1" file per view,
//! descriptor matching.

use std::path::{Path, PathBuf};

use pl_features::{
    match_descriptors, read_frontend_output, CameraSide, Frontend, FrontendOutput, MatcherConfig,
    ViewId,
};

pub fn left_file_name(frame: usize) -> String {
    format!("left_{frame:05}.plf")
}

pub fn right_file_name(frame: usize) -> String {
    format!("right_{frame:05}.plf")
}

pub struct FileFrontend {
    directory: PathBuf,
    matcher: MatcherConfig,
}

impl FileFrontend {
    pub fn new(directory: &Path, matcher: MatcherConfig) -> Self {
        Self {
            directory: directory.to_path_buf(),
            matcher,
        }
    }

    fn path_of(&self, view: ViewId) -> PathBuf {
        let name = match view.side {
            CameraSide::Left => left_file_name(view.frame),
            CameraSide::Right => right_file_name(view.frame),
        };
        self.directory.join(name)
    }
}

impl Frontend for FileFrontend {
    fn detect(&mut self, view: ViewId) -> FrontendOutput {
        let path = self.path_of(view);
        let file = std::fs::File::open(&path)
            .unwrap_or_else(|e| panic!("missing feature file {}: {e}", path.display()));
        let mut out = read_frontend_output(std::io::BufReader::new(file))
            .unwrap_or_else(|e| panic!("corrupt feature file {}: {e}", path.display()));
        out.image_id = view.image_id();
        out
    }

    fn match_features(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)> {
        match_descriptors(&a.keypoints, &b.keypoints, &self.matcher)
    }
}
