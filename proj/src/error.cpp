#include "eikon/error.hpp"

namespace eikon {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::EllipticityViolated: return "EllipticityViolated";
    case ErrorKind::BoundaryStencil: return "BoundaryStencil";
    case ErrorKind::InvalidBackground: return "InvalidBackground";
    case ErrorKind::GraphBreakdown: return "GraphBreakdown";
    case ErrorKind::DegenerateMetric: return "DegenerateMetric";
    case ErrorKind::FlowDegenerate: return "FlowDegenerate";
    case ErrorKind::StabilityViolated: return "StabilityViolated";
    case ErrorKind::InsufficientLeaves: return "InsufficientLeaves";
    case ErrorKind::LevelOutOfRange: return "LevelOutOfRange";
    case ErrorKind::QuadratureUnsupported: return "QuadratureUnsupported";
    case ErrorKind::SpectralUnavailable: return "SpectralUnavailable";
    case ErrorKind::NotTraceless: return "NotTraceless";
    case ErrorKind::DegenerateJacobian: return "DegenerateJacobian";
    case ErrorKind::InsufficientSeparations: return "InsufficientSeparations";
    case ErrorKind::QuadratureUnderResolved: return "QuadratureUnderResolved";
    case ErrorKind::InsufficientLevels: return "InsufficientLevels";
    case ErrorKind::MissingDirection: return "MissingDirection";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace eikon
