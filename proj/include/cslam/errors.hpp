#pragma once

#include <stdexcept>
#include <string>

namespace cslam {

// Base class for all recoverable errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define CSLAM_ERROR_TYPE(Name)         \
  struct Name : Error {                \
    using Error::Error;                \
  }

// feature_matching
CSLAM_ERROR_TYPE(DescriptorTypeMismatch);

// place_recognition
CSLAM_ERROR_TYPE(InsufficientCorpus);
CSLAM_ERROR_TYPE(DuplicateKeyframe);
CSLAM_ERROR_TYPE(VocabularyIoError);

// relative_pose
CSLAM_ERROR_TYPE(InsufficientNeighbors);
CSLAM_ERROR_TYPE(DegenerateConfiguration);
CSLAM_ERROR_TYPE(DegenerateSamples);

// pose_graph
CSLAM_ERROR_TYPE(DuplicateNode);
CSLAM_ERROR_TYPE(NotConnected);
CSLAM_ERROR_TYPE(NonPSDInformation);

// map_manager
CSLAM_ERROR_TYPE(SameMap);
CSLAM_ERROR_TYPE(UnknownKeyframe);

// wire_protocol
CSLAM_ERROR_TYPE(TooManyKeypoints);

// server_runtime
CSLAM_ERROR_TYPE(BindFailure);
CSLAM_ERROR_TYPE(ConfigError);

// agent_simulator
CSLAM_ERROR_TYPE(InvalidScenario);
CSLAM_ERROR_TYPE(ConnectionLost);

// evaluation
CSLAM_ERROR_TYPE(InsufficientOverlap);
CSLAM_ERROR_TYPE(CorruptJobFile);
CSLAM_ERROR_TYPE(TrajectoryIoError);

#undef CSLAM_ERROR_TYPE

}  // namespace cslam
