package bank;

public class Report {
    public String render(Account account) {
        StringBuilder sb = new StringBuilder();
        sb.append("balance: ");
        sb.append(account.getBal());
        return sb.toString();
    }
}
