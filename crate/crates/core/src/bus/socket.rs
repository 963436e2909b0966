//! Native raw CAN sockets (Linux SocketCAN).

use std::ffi::CString;
use std::io;
use std::mem;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use super::{BusError, CanBus, CanFrame};
use crate::time::TimeSource;

const CAN_EFF_FLAG: u32 = 0x8000_0000;
const CAN_RTR_FLAG: u32 = 0x4000_0000;
const CAN_ERR_FLAG: u32 = 0x2000_0000;
const CAN_EFF_MASK: u32 = 0x1FFF_FFFF;
const CAN_SFF_MASK: u32 = 0x7FF;

pub struct SocketCan {
    fd: OwnedFd,
    iface: String,
    time: TimeSource,
    open: AtomicBool,
}

fn io_err(e: io::Error) -> BusError {
    BusError::Io(e.to_string())
}

impl SocketCan {
    pub fn open(iface: &str, time: TimeSource) -> Result<Self, BusError> {
        let open_err = |reason: String| BusError::Open {
            interface: iface.to_string(),
            reason,
        };
        let name = CString::new(iface).map_err(|_| open_err("interface name contains NUL".into()))?;
        // SAFETY: plain FFI calls; the name pointer is valid for the call.
        let ifindex = unsafe { libc::if_nametoindex(name.as_ptr()) };
        if ifindex == 0 {
            return Err(open_err(format!(
                "{} (create a virtual interface with `ip link add dev {iface} type vcan && ip link set up {iface}`)",
                io::Error::last_os_error()
            )));
        }
        // SAFETY: socket(2) with constant arguments.
        let raw = unsafe { libc::socket(libc::PF_CAN, libc::SOCK_RAW | libc::SOCK_CLOEXEC, libc::CAN_RAW) };
        if raw < 0 {
            return Err(open_err(io::Error::last_os_error().to_string()));
        }
        // SAFETY: raw is a freshly created, owned descriptor.
        let fd = unsafe { OwnedFd::from_raw_fd(raw) };
        // SAFETY: sockaddr_can is plain old data; zeroed is a valid value.
        let mut addr: libc::sockaddr_can = unsafe { mem::zeroed() };
        addr.can_family = libc::AF_CAN as libc::sa_family_t;
        addr.can_ifindex = ifindex as libc::c_int;
        // SAFETY: addr is a valid sockaddr_can and the length matches.
        let rc = unsafe {
            libc::bind(
                fd.as_raw_fd(),
                &addr as *const libc::sockaddr_can as *const libc::sockaddr,
                mem::size_of::<libc::sockaddr_can>() as libc::socklen_t,
            )
        };
        if rc < 0 {
            return Err(open_err(io::Error::last_os_error().to_string()));
        }
        Ok(SocketCan {
            fd,
            iface: iface.to_string(),
            time,
            open: AtomicBool::new(true),
        })
    }

    fn check_open(&self) -> Result<(), BusError> {
        if self.open.load(Ordering::Acquire) {
            Ok(())
        } else {
            Err(BusError::Closed)
        }
    }

    fn read_frame(&self, timeout: Option<Duration>) -> Result<Option<CanFrame>, BusError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let wait_ms = match deadline {
                None => 0,
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    left.as_millis().min(i32::MAX as u128) as i32
                }
            };
            let mut pfd = libc::pollfd {
                fd: self.fd.as_raw_fd(),
                events: libc::POLLIN,
                revents: 0,
            };
            // SAFETY: pfd is a valid pollfd for the duration of the call.
            let n = unsafe { libc::poll(&mut pfd, 1, wait_ms) };
            if n < 0 {
                let e = io::Error::last_os_error();
                if e.kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return Err(io_err(e));
            }
            if n == 0 {
                return Ok(None);
            }
            // SAFETY: can_frame is plain old data.
            let mut raw: libc::can_frame = unsafe { mem::zeroed() };
            // SAFETY: reading at most size_of::<can_frame>() bytes into raw.
            let got = unsafe {
                libc::read(
                    self.fd.as_raw_fd(),
                    &mut raw as *mut libc::can_frame as *mut libc::c_void,
                    mem::size_of::<libc::can_frame>(),
                )
            };
            if got < 0 {
                return Err(io_err(io::Error::last_os_error()));
            }
            if raw.can_id & (CAN_ERR_FLAG | CAN_RTR_FLAG) != 0 {
                continue;
            }
            let extended = raw.can_id & CAN_EFF_FLAG != 0;
            let id = if extended {
                raw.can_id & CAN_EFF_MASK
            } else {
                raw.can_id & CAN_SFF_MASK
            };
            let len = usize::from(raw.can_dlc.min(8));
            let frame = CanFrame::new(id, &raw.data[..len], extended)?;
            return Ok(Some(frame.with_timestamp(self.time.now_secs())));
        }
    }
}

impl CanBus for SocketCan {
    fn send(&self, frame: &CanFrame) -> Result<CanFrame, BusError> {
        self.check_open()?;
        // SAFETY: can_frame is plain old data.
        let mut raw: libc::can_frame = unsafe { mem::zeroed() };
        raw.can_id = if frame.is_extended {
            frame.arbitration_id | CAN_EFF_FLAG
        } else {
            frame.arbitration_id
        };
        raw.can_dlc = frame.payload().len() as u8;
        raw.data[..frame.payload().len()].copy_from_slice(frame.payload());
        let stamped = frame.with_timestamp(self.time.now_secs());
        // SAFETY: writing exactly one can_frame from a valid struct.
        let n = unsafe {
            libc::write(
                self.fd.as_raw_fd(),
                &raw as *const libc::can_frame as *const libc::c_void,
                mem::size_of::<libc::can_frame>(),
            )
        };
        if n < 0 {
            let e = io::Error::last_os_error();
            return Err(match e.raw_os_error() {
                Some(libc::ENOBUFS) | Some(libc::EAGAIN) => BusError::Backpressure,
                _ => BusError::Io(format!("{}: {e}", self.iface)),
            });
        }
        Ok(stamped)
    }

    fn recv(&self, timeout: Duration) -> Result<Option<CanFrame>, BusError> {
        self.check_open()?;
        self.read_frame(Some(timeout))
    }

    fn try_recv(&self) -> Result<Option<CanFrame>, BusError> {
        self.check_open()?;
        self.read_frame(None)
    }

    fn close(&self) {
        self.open.store(false, Ordering::Release);
    }

    fn is_open(&self) -> bool {
        self.open.load(Ordering::Acquire)
    }

    fn time(&self) -> &TimeSource {
        &self.time
    }
}
