#include "handnet/errors.hpp"

namespace handnet {

int exit_code(const Error& e) noexcept {
  if (dynamic_cast<const ProtocolError*>(&e)) return exit_codes::kProtocol;
  if (dynamic_cast<const UsageError*>(&e)) return exit_codes::kUsage;
  if (dynamic_cast<const ConfigError*>(&e)) return exit_codes::kConfig;
  if (dynamic_cast<const DataError*>(&e)) return exit_codes::kData;
  if (dynamic_cast<const DivergenceError*>(&e)) return exit_codes::kDivergence;
  if (dynamic_cast<const FormatError*>(&e)) return exit_codes::kFormat;
  if (dynamic_cast<const MismatchError*>(&e)) return exit_codes::kMismatch;
  if (dynamic_cast<const DimensionError*>(&e)) return exit_codes::kDimension;
  return exit_codes::kFailure;
}

}  // namespace handnet
