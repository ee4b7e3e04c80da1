use msims_core::sip::{parse, CSeq, Method, SipError, SipMessage, SipUri, StartLine, StatusCode};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9._+!~*'()%&=$/?#\\[\\]-]{1,12}"
}

fn uri() -> impl Strategy<Value = SipUri> {
    (token(), token()).prop_map(|(u, h)| SipUri::new(u, h).unwrap())
}

fn method() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

fn start_line() -> impl Strategy<Value = StartLine> {
    prop_oneof![
        (method(), uri()).prop_map(|(method, uri)| StartLine::Request { method, uri }),
        (prop::sample::select(vec![100u16, 180, 200, 486]), "[A-Za-z][A-Za-z ]{0,10}[A-Za-z]").prop_map(|(c, reason)| {
            StartLine::Response { status: StatusCode::from_code(c).unwrap(), reason }
        }),
    ]
}

fn extra_header() -> impl Strategy<Value = (String, String)> {
    ("X-[A-Za-z0-9-]{1,8}", "[ -~]{0,20}").prop_map(|(n, v)| (n, v.trim_matches(' ').to_string()))
}

prop_compose! {
    fn message()(
        start in start_line(),
        via in proptest::option::of("SIP/2\\.0/UDP [a-z0-9.]{1,12}"),
        from in uri(),
        to in uri(),
        call_id in token(),
        seq in 1u32..,
        cseq_method in method(),
        extra in prop::collection::vec(extra_header(), 0..4),
        body in proptest::option::of("[ -~\r\n]{1,40}"),
    ) -> SipMessage {
        let cseq_method = match start { StartLine::Request { method, .. } => method, _ => cseq_method };
        SipMessage { start, via, from, to, call_id, cseq: CSeq { seq, method: cseq_method }, extra, body }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity(m in message()) {
        let wire = m.serialize();
        prop_assert_eq!(parse(&wire), Ok(m.clone()));
        prop_assert_eq!(parse(&wire).unwrap().serialize(), wire);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse(&bytes);
    }

    #[test]
    fn mutated_messages_never_panic(m in message(), idx in any::<prop::sample::Index>(), b in any::<u8>()) {
        let mut wire = m.serialize();
        let i = idx.index(wire.len());
        wire[i] = b;
        let _ = parse(&wire);
        wire.truncate(i);
        prop_assert!(parse(&wire).is_err());
    }
}

#[test]
fn content_length_counts_bytes_not_chars() {
    let m = SipMessage::request(Method::Invite, "c9", SipUri::new("a", "h").unwrap(), SipUri::new("b", "h").unwrap(), 1, Some("é".into()));
    let wire = m.to_wire();
    assert!(wire.contains("Content-Length: 2\r\n"));
    assert_eq!(parse(wire.as_bytes()), Ok(m));
}

#[test]
fn wrong_length_is_classified() {
    let wire = "BYE sip:b@h SIP/2.0\r\nFrom: <sip:a@h>\r\nTo: <sip:b@h>\r\nCall-ID: x\r\nCSeq: 2 BYE\r\nContent-Length: 3\r\n\r\nab";
    assert_eq!(parse(wire.as_bytes()), Err(SipError::LengthMismatch { declared: 3, actual: 2 }));
}
