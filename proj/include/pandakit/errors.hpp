#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pandakit {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PANDAKIT_DEFINE_ERROR(Name) \
  class Name : public Error {       \
   public:                          \
    using Error::Error;             \
  }

// kinematics
PANDAKIT_DEFINE_ERROR(Unreachable);
PANDAKIT_DEFINE_ERROR(NearSingular);

// trajectory
PANDAKIT_DEFINE_ERROR(InfeasibleStart);
PANDAKIT_DEFINE_ERROR(WaypointOutOfLimits);
PANDAKIT_DEFINE_ERROR(DegenerateRotation);
PANDAKIT_DEFINE_ERROR(OutOfRange);

// client / server
PANDAKIT_DEFINE_ERROR(ConnectionRefused);
PANDAKIT_DEFINE_ERROR(FciInactive);
PANDAKIT_DEFINE_ERROR(ExclusiveLock);
PANDAKIT_DEFINE_ERROR(BusyError);
PANDAKIT_DEFINE_ERROR(NotRunning);
PANDAKIT_DEFINE_ERROR(InvalidCommand);
PANDAKIT_DEFINE_ERROR(AuthFailed);
PANDAKIT_DEFINE_ERROR(InvalidTransition);
PANDAKIT_DEFINE_ERROR(GripperBusy);
PANDAKIT_DEFINE_ERROR(Disconnected);
PANDAKIT_DEFINE_ERROR(NotInError);
PANDAKIT_DEFINE_ERROR(StillMoving);
PANDAKIT_DEFINE_ERROR(ProtocolError);

// mmc
PANDAKIT_DEFINE_ERROR(NoConvergence);

#undef PANDAKIT_DEFINE_ERROR

}  // namespace pandakit
