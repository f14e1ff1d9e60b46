//! Flow ingest: NetFlow v5 over UDP or from replay files, and flow-CSV text.

pub mod csv;
pub mod listener;
pub mod netflow;
pub mod replay;

pub use self::csv::{read_flow_csv, write_flow_csv, CsvError, FlowCsvReader, CSV_HEADER};
pub use listener::{
    listen_udp, DatagramProcessor, IngestStats, IngestStatsSnapshot, ListenError, UdpCollector,
    DEFAULT_PORT,
};
pub use netflow::{
    decode_netflow_v5, encode_netflow_v5, pack_datagrams, NetflowError, NetflowV5Header,
    V5Datagram, V5Extras, V5Record,
};
pub use replay::{read_replay, write_replay, ReplayError};
