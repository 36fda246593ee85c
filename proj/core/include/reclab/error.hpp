#pragma once

#include <stdexcept>
#include <string>

namespace reclab {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RECLAB_DEFINE_ERROR(Name, Base)      \
  class Name : public Base {                 \
   public:                                   \
    using Base::Base;                        \
  }

// Event log validation.
RECLAB_DEFINE_ERROR(BipartitenessViolation, Error);
RECLAB_DEFINE_ERROR(DanglingReciprocation, Error);
RECLAB_DEFINE_ERROR(DuplicateEvent, Error);
RECLAB_DEFINE_ERROR(EmptySplit, Error);

// Preprocessing.
RECLAB_DEFINE_ERROR(DegenerateBbox, Error);
RECLAB_DEFINE_ERROR(SequenceTooLong, Error);

// Models.
RECLAB_DEFINE_ERROR(UninitializedWeights, Error);
RECLAB_DEFINE_ERROR(InsufficientJudges, Error);
RECLAB_DEFINE_ERROR(MissingImage, Error);
RECLAB_DEFINE_ERROR(EmptyPool, Error);
RECLAB_DEFINE_ERROR(Divergence, Error);

// Evaluation.
RECLAB_DEFINE_ERROR(DegenerateLabels, Error);

// Pipeline. Exit codes are attached to these in the CLI.
RECLAB_DEFINE_ERROR(ConfigError, Error);
RECLAB_DEFINE_ERROR(IoFailure, Error);
RECLAB_DEFINE_ERROR(MissingUpstream, Error);
RECLAB_DEFINE_ERROR(ProvenanceError, Error);
RECLAB_DEFINE_ERROR(SplitContamination, ProvenanceError);
RECLAB_DEFINE_ERROR(FormatError, IoFailure);

#undef RECLAB_DEFINE_ERROR

}  // namespace reclab
