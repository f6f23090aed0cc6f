#include "perfuseg/error.hpp"

#include <atomic>

#include "perfuseg/log.hpp"

namespace perfuseg {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "configuration";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::LabelEncoding: return "label-encoding";
    case ErrorKind::Format: return "format";
    case ErrorKind::IncompleteFile: return "incomplete-file";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::InconsistentAcquisition: return "inconsistent-acquisition";
    case ErrorKind::Duplicate: return "duplicate";
    case ErrorKind::SkullStrip: return "skull-strip";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::ModelConstruction: return "model-construction";
    case ErrorKind::Load: return "load";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Divergence: return "divergence";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return 2;
    case ErrorKind::Divergence: return 3;
    default: return 1;
  }
}

namespace log {

namespace {
std::atomic<Level> g_threshold{Level::Info};
}

Level threshold() { return g_threshold.load(std::memory_order_relaxed); }
void set_threshold(Level level) { g_threshold.store(level, std::memory_order_relaxed); }

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace log
}  // namespace perfuseg
