#ifndef QDDRIVE_H
#define QDDRIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QddStatus {
  QDD_STATUS_OK = 0,
  QDD_STATUS_NULL_ARGUMENT = 1,
  QDD_STATUS_INVALID_ARGUMENT = 2,
  QDD_STATUS_UNKNOWN_ACTUATOR = 3,
  QDD_STATUS_DISABLED = 4,
  QDD_STATUS_NOT_CONNECTED = 5,
  QDD_STATUS_LIMIT_VIOLATION = 6,
  QDD_STATUS_CODEC = 7,
  QDD_STATUS_BUS = 8,
  QDD_STATUS_PANIC = 9,
} QddStatus;

/*
 Simulated actuators answering on a virtual channel.
 */
typedef struct QddFleet QddFleet;

/*
 Actuators sharing one bus.
 */
typedef struct QddGroup QddGroup;

/*
 MIT-mode command fields in physical units.
 */
typedef struct QddMitCommand {
  double position;
  double velocity;
  double kp;
  double kd;
  double torque_ff;
} QddMitCommand;

typedef struct QddState {
  double position;
  double velocity;
  double torque;
  double temperature;
  /*
   Bus time of the feedback, seconds.
   */
  double timestamp;
  uint8_t fault_code;
  bool stale;
} QddState;

typedef struct QddFrame {
  uint32_t arbitration_id;
  bool extended;
  uint8_t data[8];
} QddFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *qdd_version(void);

/*
 Copies the calling thread's last error message into `buf` (truncated,
 always NUL-terminated when `len > 0`). Returns the full message length
 without the terminator; 0 after a successful call.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t qdd_last_error(char *buf, size_t len);

/*
 Opens a group on `bus` (`virtual:NAME` or `can:IFACE`) for a roster such
 as `"AK80-9:1,AK80-9:2"`. Default safety settings.

 # Safety
 `bus_spec` and `roster_spec` must be NUL-terminated strings; `out_group`
 must be valid. On success `*out_group` owns a handle for [`qdd_group_free`].
 */
enum QddStatus qdd_group_open(const char *bus_spec,
                              const char *roster_spec,
                              struct QddGroup **out_group);

/*
 Sends zero torque then Disable to every enabled actuator and releases the
 handle. Null is ignored.

 # Safety
 `g` must be null or a handle from [`qdd_group_open`] not yet freed.
 */
void qdd_group_free(struct QddGroup *g);

/*
 Enables every actuator. Fails with the first actuator's error; the others
 are still attempted.

 # Safety
 `g` must be a live group handle.
 */
enum QddStatus qdd_group_enable_all(struct QddGroup *g);

/*
 # Safety
 `g` must be a live group handle.
 */
enum QddStatus qdd_group_disable_all(struct QddGroup *g);

/*
 Pure torque command. `applied` (may be null) receives the torque after
 the safety layer.

 # Safety
 `g` must be a live group handle; `applied` null or writable.
 */
enum QddStatus qdd_group_command_torque(struct QddGroup *g,
                                        uint32_t can_id,
                                        double torque,
                                        double *applied);

/*
 # Safety
 `g` must be a live group handle.
 */
enum QddStatus qdd_group_command_position(struct QddGroup *g,
                                          uint32_t can_id,
                                          double position,
                                          double kp,
                                          double kd);

/*
 # Safety
 `g` must be a live group handle.
 */
enum QddStatus qdd_group_command_velocity(struct QddGroup *g,
                                          uint32_t can_id,
                                          double velocity,
                                          double kd);

/*
 Full MIT command. `sent` (may be null) receives the command as it went out.

 # Safety
 `g` must be a live group handle; `cmd` readable; `sent` null or writable.
 */
enum QddStatus qdd_group_command_impedance(struct QddGroup *g,
                                           uint32_t can_id,
                                           const struct QddMitCommand *cmd,
                                           struct QddMitCommand *sent);

/*
 Latest cached state, after draining pending feedback.

 # Safety
 `g` must be a live group handle; `state` writable.
 */
enum QddStatus qdd_group_query_state(struct QddGroup *g, uint32_t can_id, struct QddState *state);

/*
 Trailing-window RMS of the commanded torque, Nm.

 # Safety
 `g` must be a live group handle; `rms` writable.
 */
enum QddStatus qdd_group_rms_torque(struct QddGroup *g, uint32_t can_id, double *rms);

/*
 Starts simulated actuators for `roster_spec` on the virtual channel named
 by `bus_spec`. They answer until [`qdd_fleet_free`].

 # Safety
 String arguments must be NUL-terminated; `out_fleet` must be valid.
 */
enum QddStatus qdd_fleet_open(const char *bus_spec,
                              const char *roster_spec,
                              struct QddFleet **out_fleet);

/*
 Simulated actuator state: position, velocity, applied torque.

 # Safety
 `f` must be a live fleet handle; `state` writable.
 */
enum QddStatus qdd_fleet_state(struct QddFleet *f, uint32_t can_id, struct QddState *state);

/*
 # Safety
 `f` must be null or a handle from [`qdd_fleet_open`] not yet freed.
 */
void qdd_fleet_free(struct QddFleet *f);

/*
 Packs a command for actuator `can_id` of `model`.

 # Safety
 `model` NUL-terminated; `cmd` readable; `frame` writable.
 */
enum QddStatus qdd_encode_command(const char *model,
                                  uint32_t can_id,
                                  const struct QddMitCommand *cmd,
                                  struct QddFrame *frame);

/*
 Actuator-side decode of a command frame. Fails with `InvalidArgument` if
 the frame is not a command addressed to `can_id`.

 # Safety
 `model` NUL-terminated; `frame` readable; `cmd` writable.
 */
enum QddStatus qdd_decode_command(const char *model,
                                  uint32_t can_id,
                                  const struct QddFrame *frame,
                                  struct QddMitCommand *cmd);

/*
 Rated and peak torque of a shipped model, Nm.

 # Safety
 `model` NUL-terminated; outputs writable.
 */
enum QddStatus qdd_model_torque_limits(const char *model, double *rated, double *peak);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDDRIVE_H */
