//! Construction and dissection of the user-plane header stack:
//! Ethernet II (optional 802.1Q) / IPv4 / UDP / GTPv1-U / IPv4 / UDP.
//!
//! Only the mandatory 8-byte GTP-U header is understood. Frames that set any
//! of the E, S or PN flags are rejected.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GTPU_PORT: u16 = 2152;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const IPPROTO_UDP: u8 = 17;
pub const GTPU_MSG_GPDU: u8 = 0xFF;

const ETH_LEN: usize = 14;
const VLAN_LEN: usize = 4;
const IPV4_LEN: usize = 20;
const UDP_LEN: usize = 8;
const GTPU_LEN: usize = 8;

/// Outer Ethernet + IPv4 + UDP + GTP-U + inner IPv4 + UDP, untagged.
pub const MIN_FRAME_BYTES: usize = ETH_LEN + IPV4_LEN + UDP_LEN + GTPU_LEN + IPV4_LEN + UDP_LEN;
/// Largest frame the pipeline is dimensioned for (1500-byte MTU, tagged).
pub const MAX_FRAME_BYTES: usize = 1522;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes at {layer}, have {available}")]
    Truncated {
        layer: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("not a GTP-U frame: {0}")]
    NotGtpu(&'static str),
    #[error("unsupported GTP-U header (flags {flags:#04x})")]
    UnsupportedVersion { flags: u8 },
    #[error("requested frame of {requested} bytes is below the {minimum}-byte header stack")]
    FrameTooShort { requested: usize, minimum: usize },
    #[error("frame of {0} bytes does not fit an IPv4 datagram")]
    FrameTooLong(usize),
}

pub type MacAddr = [u8; 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EthernetHeader {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub vlan_id: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ipv4Header {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub total_length: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtpuHeader {
    pub version: u8,
    pub msg_type: u8,
    /// Bytes following the mandatory header.
    pub length: u16,
    pub teid: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedHeaders {
    pub outer_eth: EthernetHeader,
    pub outer_ipv4: Ipv4Header,
    pub outer_udp: UdpHeader,
    pub gtpu: GtpuHeader,
    pub inner_ipv4: Ipv4Header,
    pub inner_udp: UdpHeader,
    /// Inner UDP payload bytes.
    pub payload_len: usize,
}

/// Addressing for one tunnelled flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowAddresses {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub vlan_id: Option<u16>,
    pub outer_src: Ipv4Addr,
    pub outer_dst: Ipv4Addr,
    /// Outer UDP source port; destination is always 2152.
    pub outer_src_port: u16,
    pub inner_src: Ipv4Addr,
    pub inner_dst: Ipv4Addr,
}

impl Default for FlowAddresses {
    fn default() -> Self {
        FlowAddresses {
            src_mac: [0x02, 0, 0, 0, 0, 0x01],
            dst_mac: [0x02, 0, 0, 0, 0, 0x02],
            vlan_id: None,
            outer_src: Ipv4Addr::new(10, 0, 0, 1),
            outer_dst: Ipv4Addr::new(10, 0, 0, 2),
            outer_src_port: GTPU_PORT,
            inner_src: Ipv4Addr::new(172, 16, 0, 1),
            inner_dst: Ipv4Addr::new(192, 168, 0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDescription {
    pub teid: u32,
    pub inner_src_port: u16,
    pub inner_dst_port: u16,
    pub payload_len: usize,
    pub addresses: FlowAddresses,
}

impl FlowDescription {
    /// Header bytes this description's stack occupies.
    pub fn header_len(&self) -> usize {
        MIN_FRAME_BYTES + if self.addresses.vlan_id.is_some() { VLAN_LEN } else { 0 }
    }

    pub fn frame_len(&self) -> usize {
        self.header_len() + self.payload_len
    }

    /// Sizes the payload so that the whole frame is `frame_size` bytes.
    pub fn with_frame_size(mut self, frame_size: usize) -> Result<Self, WireError> {
        let minimum = self.header_len();
        if frame_size < minimum {
            return Err(WireError::FrameTooShort {
                requested: frame_size,
                minimum,
            });
        }
        self.payload_len = frame_size - minimum;
        Ok(self)
    }
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        let mut it = chunk.chunks_exact(2);
        for w in &mut it {
            sum += u16::from_be_bytes([w[0], w[1]]) as u32;
        }
        if let [b] = it.remainder() {
            sum += (*b as u32) << 8;
        }
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn put_ipv4(buf: &mut [u8], src: Ipv4Addr, dst: Ipv4Addr, total_len: u16, id: u16) {
    buf[0] = 0x45;
    buf[1] = 0;
    buf[2..4].copy_from_slice(&total_len.to_be_bytes());
    buf[4..6].copy_from_slice(&id.to_be_bytes());
    buf[6..8].copy_from_slice(&0x4000u16.to_be_bytes()); // DF
    buf[8] = 64;
    buf[9] = IPPROTO_UDP;
    buf[10..12].fill(0);
    buf[12..16].copy_from_slice(&src.octets());
    buf[16..20].copy_from_slice(&dst.octets());
    let csum = checksum(&[&buf[..IPV4_LEN]]);
    buf[10..12].copy_from_slice(&csum.to_be_bytes());
}

/// Writes a UDP header over `seg` (header + payload) including the checksum.
fn put_udp(seg: &mut [u8], src: Ipv4Addr, dst: Ipv4Addr, sport: u16, dport: u16) {
    let len = seg.len() as u16;
    seg[0..2].copy_from_slice(&sport.to_be_bytes());
    seg[2..4].copy_from_slice(&dport.to_be_bytes());
    seg[4..6].copy_from_slice(&len.to_be_bytes());
    seg[6..8].fill(0);
    let mut pseudo = [0u8; 12];
    pseudo[0..4].copy_from_slice(&src.octets());
    pseudo[4..8].copy_from_slice(&dst.octets());
    pseudo[9] = IPPROTO_UDP;
    pseudo[10..12].copy_from_slice(&len.to_be_bytes());
    let mut csum = checksum(&[&pseudo, seg]);
    if csum == 0 {
        csum = 0xffff;
    }
    seg[6..8].copy_from_slice(&csum.to_be_bytes());
}

/// Serialises a GTP-U encapsulated frame for `flow`.
pub fn build_frame(flow: &FlowDescription) -> Result<Vec<u8>, WireError> {
    let a = &flow.addresses;
    let total = flow.frame_len();
    let l2 = flow.header_len() - (MIN_FRAME_BYTES - ETH_LEN);
    let outer_ip_len = total - l2;
    if outer_ip_len > u16::MAX as usize {
        return Err(WireError::FrameTooLong(total));
    }
    let mut buf = vec![0u8; total];

    buf[0..6].copy_from_slice(&a.dst_mac);
    buf[6..12].copy_from_slice(&a.src_mac);
    let mut off = 12;
    if let Some(vid) = a.vlan_id {
        buf[off..off + 2].copy_from_slice(&ETHERTYPE_VLAN.to_be_bytes());
        buf[off + 2..off + 4].copy_from_slice(&(vid & 0x0fff).to_be_bytes());
        off += VLAN_LEN;
    }
    buf[off..off + 2].copy_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    off += 2;

    let outer_ip = off;
    let outer_udp = outer_ip + IPV4_LEN;
    let gtpu = outer_udp + UDP_LEN;
    let inner_ip = gtpu + GTPU_LEN;
    let inner_udp = inner_ip + IPV4_LEN;
    let inner_ip_len = (total - inner_ip) as u16;

    // Inner headers first: the outer UDP checksum covers them.
    put_udp(
        &mut buf[inner_udp..],
        a.inner_src,
        a.inner_dst,
        flow.inner_src_port,
        flow.inner_dst_port,
    );
    put_ipv4(&mut buf[inner_ip..inner_udp], a.inner_src, a.inner_dst, inner_ip_len, 0);

    buf[gtpu] = 0x30; // version 1, PT=1, no optional fields
    buf[gtpu + 1] = GTPU_MSG_GPDU;
    buf[gtpu + 2..gtpu + 4].copy_from_slice(&inner_ip_len.to_be_bytes());
    buf[gtpu + 4..gtpu + 8].copy_from_slice(&flow.teid.to_be_bytes());

    put_udp(&mut buf[outer_udp..], a.outer_src, a.outer_dst, a.outer_src_port, GTPU_PORT);
    put_ipv4(
        &mut buf[outer_ip..outer_udp],
        a.outer_src,
        a.outer_dst,
        outer_ip_len as u16,
        (flow.teid & 0xffff) as u16,
    );
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, layer: &'static str) -> Result<&'a [u8], WireError> {
        let end = self.off.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.off..end];
                self.off = end;
                Ok(s)
            }
            None => Err(WireError::Truncated {
                layer,
                needed: self.off + n,
                available: self.buf.len(),
            }),
        }
    }

    fn u16(&mut self, layer: &'static str) -> Result<u16, WireError> {
        let b = self.take(2, layer)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn ipv4(cur: &mut Cursor<'_>, layer: &'static str) -> Result<Ipv4Header, WireError> {
    let start = cur.off;
    let fixed = cur.take(IPV4_LEN, layer)?;
    if fixed[0] >> 4 != 4 {
        return Err(WireError::NotGtpu("IP version is not 4"));
    }
    let ihl = (fixed[0] & 0x0f) as usize * 4;
    if ihl < IPV4_LEN {
        return Err(WireError::NotGtpu("IPv4 header length below 20"));
    }
    cur.take(ihl - IPV4_LEN, layer)?;
    if fixed[9] != IPPROTO_UDP {
        return Err(WireError::NotGtpu("IP protocol is not UDP"));
    }
    let total_length = be16(&fixed[2..4]);
    if (total_length as usize) < ihl + UDP_LEN {
        return Err(WireError::NotGtpu("IPv4 total length too small"));
    }
    if start + total_length as usize > cur.buf.len() {
        return Err(WireError::Truncated {
            layer,
            needed: start + total_length as usize,
            available: cur.buf.len(),
        });
    }
    Ok(Ipv4Header {
        src: Ipv4Addr::new(fixed[12], fixed[13], fixed[14], fixed[15]),
        dst: Ipv4Addr::new(fixed[16], fixed[17], fixed[18], fixed[19]),
        total_length,
    })
}

fn udp(cur: &mut Cursor<'_>, layer: &'static str) -> Result<(UdpHeader, u16), WireError> {
    let b = cur.take(UDP_LEN, layer)?;
    Ok((
        UdpHeader {
            src_port: be16(&b[0..2]),
            dst_port: be16(&b[2..4]),
        },
        be16(&b[4..6]),
    ))
}

/// Dissects a frame. Never reads past `bytes`; checksums are not verified.
pub fn parse_frame(bytes: &[u8]) -> Result<ParsedHeaders, WireError> {
    let mut cur = Cursor { buf: bytes, off: 0 };
    let macs = cur.take(12, "ethernet")?;
    let mut dst = [0u8; 6];
    let mut src = [0u8; 6];
    dst.copy_from_slice(&macs[0..6]);
    src.copy_from_slice(&macs[6..12]);
    let mut ethertype = cur.u16("ethernet")?;
    let mut vlan_id = None;
    if ethertype == ETHERTYPE_VLAN {
        vlan_id = Some(cur.u16("vlan")? & 0x0fff);
        ethertype = cur.u16("vlan")?;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(WireError::NotGtpu("ethertype is not IPv4"));
    }

    let outer_ipv4 = ipv4(&mut cur, "outer ipv4")?;
    let (outer_udp, _) = udp(&mut cur, "outer udp")?;
    if outer_udp.dst_port != GTPU_PORT {
        return Err(WireError::NotGtpu("outer UDP destination port is not 2152"));
    }

    let g = cur.take(GTPU_LEN, "gtp-u")?;
    let flags = g[0];
    let version = flags >> 5;
    // PT must be 1 (GTP, not GTP'); E, S and PN must be clear.
    if version != 1 || flags & 0x10 == 0 || flags & 0x07 != 0 {
        return Err(WireError::UnsupportedVersion { flags });
    }
    let gtpu = GtpuHeader {
        version,
        msg_type: g[1],
        length: be16(&g[2..4]),
        teid: u32::from_be_bytes([g[4], g[5], g[6], g[7]]),
    };
    if gtpu.msg_type != GTPU_MSG_GPDU {
        return Err(WireError::NotGtpu("GTP-U message is not a G-PDU"));
    }
    let tpdu_start = cur.off;
    if tpdu_start + gtpu.length as usize > bytes.len() {
        return Err(WireError::Truncated {
            layer: "gtp-u payload",
            needed: tpdu_start + gtpu.length as usize,
            available: bytes.len(),
        });
    }

    let inner_ipv4 = ipv4(&mut cur, "inner ipv4")?;
    if inner_ipv4.total_length as usize > gtpu.length as usize {
        return Err(WireError::NotGtpu("inner datagram longer than GTP-U length"));
    }
    let (inner_udp, inner_udp_len) = udp(&mut cur, "inner udp")?;
    let inner_udp_len = inner_udp_len as usize;
    if inner_udp_len < UDP_LEN {
        return Err(WireError::NotGtpu("inner UDP length below 8"));
    }
    let payload_len = inner_udp_len - UDP_LEN;
    cur.take(payload_len, "inner payload")?;

    Ok(ParsedHeaders {
        outer_eth: EthernetHeader { dst, src, vlan_id },
        outer_ipv4,
        outer_udp,
        gtpu,
        inner_ipv4,
        inner_udp,
        payload_len,
    })
}
