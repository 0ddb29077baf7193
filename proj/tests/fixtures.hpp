#pragma once

// Shared, lazily built phantom runs. The pipeline is slow enough that the
// unit tests reuse one noiseless run.

#include "vqct/phantom.hpp"
#include "vqct/pipeline.hpp"
#include "vqct/studies.hpp"

namespace testing {

inline const vqct::Phantom& default_phantom() {
  static const vqct::Phantom ph = vqct::generate_phantom(vqct::PhantomSpec::default_three_level());
  return ph;
}

inline const vqct::PipelineResult& noiseless_run() {
  static const vqct::PipelineResult res = vqct::run_pipeline(
      default_phantom().volume, vqct::phantom_seeds(default_phantom().truth), vqct::PipelineConfig{});
  return res;
}

/// Lifts a level mask from its crop onto the full phantom lattice.
inline vqct::Mask full_mask(const vqct::LevelResult& l, const std::string& name) {
  vqct::Mask out(default_phantom().volume.geometry(), 0);
  vqct::paste(out, l.masks.at(name), l.crop_lo);
  return out;
}

}  // namespace testing
