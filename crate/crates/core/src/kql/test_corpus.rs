//! Reference queries shared by unit tests, integration tests and benches.

/// Device IDs last seen connecting from one IP within a week.
pub const DEVICE_IP_QUERY: &str = r#"DeviceNetworkEvents
| where Timestamp >= ago(7d)
| where ActionType == 'ConnectionSuccess'
| summarize arg_max(Timestamp, LocalIP) by DeviceId
| where LocalIP == "89.12.55.1"
| project DeviceId"#;

/// Phishing email in a time window that was not caught by impersonation policy.
pub const PHISH_WINDOW_QUERY: &str = r#"EmailEvents
| where Timestamp between(datetime(" 2022-10-05T20:54:33Z") .. datetime("2022-10-05T21:05:12Z"))
| where ThreatTypes has "Phish"
| where EmailActionPolicy != "Anti-phishing user impersonation""#;

/// Model output for the same request as [`PHISH_WINDOW_QUERY`]; `has_any` is used in
/// function-call form.
pub const HAS_ANY_CALL_QUERY: &str = r#"EmailEvents
| where Timestamp between (datetime(2022-10-05 20:54:33) .. datetime(2022-10-05 21:05:12))
| where has_any(ThreatTypes, "Phish", "Phishing")
| project Timestamp, NetworkMessageId, SenderMailFromAddress, RecipientEmailAddress, Subject, ThreatTypes, DetectionMethods"#;

/// Queries that parse under the subset grammar.
pub const VALID_CORPUS: &[&str] = &[
    DEVICE_IP_QUERY,
    PHISH_WINDOW_QUERY,
    HAS_ANY_CALL_QUERY,
    "EmailEvents | take 5",
    "DeviceProcessEvents | where FileName in~ (\"powershell.exe\", \"pwsh.exe\") and ProcessCommandLine contains \"-enc\" | project Timestamp, DeviceName, ProcessCommandLine",
    "DeviceLogonEvents | where Timestamp > ago(1d) and ActionType == \"LogonFailed\" | summarize Failures = count() by AccountName, DeviceName | where Failures > 10 | sort by Failures desc",
    "DeviceNetworkEvents | where RemotePort == 3389 or RemotePort == 22 | summarize dcount(RemoteIP) by DeviceId, bin(Timestamp, 1h)",
    "EmailEvents | where not(ThreatTypes has \"Phish\") | count",
    "DeviceFileEvents | where FolderPath startswith @\"C:\\Users\" and FileName endswith \".exe\" | top 10 by Timestamp desc",
    "DeviceProcessEvents | join kind=inner (DeviceNetworkEvents | where RemotePort == 443) on DeviceId | project DeviceId, RemoteIP",
    "EmailEvents | join EmailAttachmentInfo on NetworkMessageId | where FileType =~ \"docm\" | distinct SenderFromAddress, FileName",
    "union DeviceProcessEvents, DeviceFileEvents | where Timestamp between (ago(2h) .. now()) | take 100",
    "DeviceEvents | extend Hour = datetime_part(\"hour\", Timestamp), Tag = strcat(DeviceName, \"-\", ActionType) | where Hour < 6 | limit 20",
    "IdentityLogonEvents | where ActionType == \"LogonFailed\" and isnotempty(IPAddress) | summarize Attempts = count(), Accounts = dcount(AccountUpn) by IPAddress | where Attempts >= 50 and Accounts > 5",
    "DeviceNetworkEvents | where RemoteUrl has_any (\"pastebin.com\", \"ngrok.io\") | summarize by DeviceName",
    "DeviceRegistryEvents | where RegistryKey matches regex @\"(?i)\\\\Run$\" | project Timestamp, DeviceName, RegistryValueData",
    "AlertInfo | join kind=leftouter AlertEvidence on $left.AlertId == $right.AlertId | where Severity in (\"High\", \"Medium\") | sort by Timestamp asc, Title",
    "DeviceProcessEvents | where ProcessCommandLine !contains \"update\" and AccountName !in (\"system\", \"local service\") | distinct *",
    "EmailUrlInfo | where Url has_all (\"login\", \"verify\") | project NetworkMessageId, Url | take 50",
    "DeviceInfo | where OSPlatform == \"Windows10\" and Timestamp >= ago(30d) | summarize arg_max(Timestamp, *) by DeviceId | project DeviceId, DeviceName, OSVersion",
    "DeviceNetworkEvents | where Timestamp >= datetime(2024-01-01) and RemotePort between (1024 .. 65535) | summarize Connections = count() by RemoteIP | top 5 by Connections",
    "CloudAppEvents | where Timestamp > ago(12h) and ActionType == \"FileDownloaded\" | extend Size = toint(RawEventData.size) | where Size > -1 | project AccountDisplayName, Size",
];

/// Tables referenced by the reference queries.
pub fn reference_schema() -> super::SchemaCatalog {
    use super::{Column, ScalarType::*};
    let mut s = super::SchemaCatalog::new();
    let tables = [
        (
            "DeviceNetworkEvents",
            vec![
                Column::new("Timestamp", Datetime),
                Column::new("DeviceId", String),
                Column::new("ActionType", String),
                Column::new("LocalIP", String),
                Column::new("RemotePort", Int),
            ],
        ),
        (
            "EmailEvents",
            vec![
                Column::new("Timestamp", Datetime),
                Column::new("NetworkMessageId", String),
                Column::new("SenderMailFromAddress", String),
                Column::new("RecipientEmailAddress", String),
                Column::new("Subject", String),
                Column::new("ThreatTypes", String),
                Column::new("DetectionMethods", String),
                Column::new("EmailActionPolicy", String),
            ],
        ),
    ];
    for (name, cols) in tables {
        s.add_table(name, cols).expect("distinct tables");
    }
    s
}
